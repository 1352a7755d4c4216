//! Subcommand implementations: simulate, analyze, conjugate, report.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use specorr_core::{
    channel_counts, conjugate_wavelength, conjugation_locus, correlation_map, fano, gemellity,
    generate_shots, load_config, noise_reduction_db, noise_reduction_db_raw_variance,
    normalize_rows, pearson, run_arm, window_series, Arm, Channel, CorrelationMap, DetectorModel,
    EnsembleSpectra, Error, Result, ValueKind,
};

#[derive(Parser)]
#[command(
    name = "specorr",
    version,
    about = "Supercontinuum shot-ensemble simulation and spectral-correlation analysis"
)]
pub struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum ArmChoice {
    Filament,
    Reference,
    Both,
}

#[derive(Subcommand)]
enum Command {
    /// Run the seeded shot ensemble through the nonlinear and/or linear arm
    /// and write FNSE ensemble files
    Simulate {
        /// Run configuration file
        #[arg(long)]
        config: PathBuf,
        /// Which arm(s) to run
        #[arg(long, value_enum, default_value_t = ArmChoice::Both)]
        arm: ArmChoice,
        /// Worker threads for the shot loop (0 = one per core)
        #[arg(long, default_value_t = 0)]
        workers: usize,
    },
    /// Compute the correlation map and noise metrics of an ensemble
    Analyze {
        /// Ensemble to analyze (.fnse, or .csv with bin centers as header)
        #[arg(long)]
        input: PathBuf,
        /// Reference-arm ensemble for the noise-reduction comparison
        #[arg(long)]
        reference: Option<PathBuf>,
        /// Carrier wavelength in nm for the conjugation locus
        #[arg(long)]
        lambda0: f64,
        /// Photodiode channel centers in nm, comma separated
        #[arg(long, value_delimiter = ',')]
        channels: Vec<f64>,
        /// Channel bandwidth in nm
        #[arg(long, default_value_t = 9.0)]
        channel_bandwidth: f64,
        /// Filter window `lo:hi` in nm (repeatable); needs --reference
        #[arg(long = "window")]
        windows: Vec<String>,
        /// Directory for map.csv and metrics.json
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
        /// Draw Poisson shot noise in the photon-count series
        #[arg(long)]
        poisson: bool,
        /// Compare raw variances between the arms instead of relative
        /// intensity noise
        #[arg(long)]
        raw_variance: bool,
        /// Grating efficiency of the virtual detector
        #[arg(long, default_value_t = 0.9)]
        grating_efficiency: f64,
        /// Photodiode quantum efficiency
        #[arg(long, default_value_t = 0.93)]
        quantum_efficiency: f64,
    },
    /// Print the wavelength conjugate to lambda2 about lambda0
    /// (2/lambda0 = 1/lambda1 + 1/lambda2)
    Conjugate { lambda0: f64, lambda2: f64 },
    /// Summarize a metrics file against the expected sign patterns
    Report {
        /// metrics.json produced by analyze
        #[arg(long)]
        input: PathBuf,
        /// Accept mismatched filament/reference config digests
        #[arg(long)]
        force: bool,
    },
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Simulate {
            config,
            arm,
            workers,
        } => simulate(&config, arm, workers),
        Command::Analyze {
            input,
            reference,
            lambda0,
            channels,
            channel_bandwidth,
            windows,
            out_dir,
            poisson,
            raw_variance,
            grating_efficiency,
            quantum_efficiency,
        } => analyze(AnalyzeArgs {
            input,
            reference,
            lambda0,
            channels,
            channel_bandwidth,
            windows,
            out_dir,
            poisson,
            raw_variance,
            grating_efficiency,
            quantum_efficiency,
        }),
        Command::Conjugate { lambda0, lambda2 } => {
            let l1 = conjugate_wavelength(lambda0, lambda2)?;
            println!("{l1:.2}");
            Ok(())
        }
        Command::Report { input, force } => report(&input, force),
    }
}

fn config_error(msg: impl Into<String>) -> Error {
    Error::ConfigValidation {
        errors: vec![msg.into()],
    }
}

// ---------------------------------------------------------------------------
// simulate

fn simulate(config_path: &Path, arm: ArmChoice, workers: usize) -> Result<()> {
    let cfg = load_config(config_path)?;
    let grid = cfg.build_grid()?;
    let shots = generate_shots(cfg.seed, cfg.n_shots, &cfg.pulse, &cfg.jitter)?;

    fs::create_dir_all(&cfg.output_dir).map_err(|source| Error::Io {
        path: cfg.output_dir.display().to_string(),
        source,
    })?;

    let arms: Vec<Arm> = match arm {
        ArmChoice::Filament => vec![Arm::Filament],
        ArmChoice::Reference => vec![Arm::Reference],
        ArmChoice::Both => vec![Arm::Filament, Arm::Reference],
    };

    let run_all = || -> Result<()> {
        for a in &arms {
            let medium = match a {
                Arm::Filament => cfg.medium.clone(),
                Arm::Reference => cfg.medium.linearized(),
            };
            let ens = run_arm(
                &shots,
                &medium,
                cfg.distance_m,
                &grid,
                &cfg.binning,
                &cfg.step,
                *a,
                cfg.digest(),
            )?;
            let path = cfg.output_dir.join(format!("{}.fnse", a.name()));
            specorr_core::io::save_ensemble(&ens, &path)?;
            println!("wrote {}", path.display());
        }
        Ok(())
    };

    if workers > 0 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::InvalidInput(format!("cannot build thread pool: {e}")))?;
        pool.install(run_all)?;
    } else {
        run_all()?;
    }

    println!("seed = {}", cfg.seed);
    println!("digest = {}", cfg.digest_hex());
    Ok(())
}

// ---------------------------------------------------------------------------
// analyze

struct AnalyzeArgs {
    input: PathBuf,
    reference: Option<PathBuf>,
    lambda0: f64,
    channels: Vec<f64>,
    channel_bandwidth: f64,
    windows: Vec<String>,
    out_dir: PathBuf,
    poisson: bool,
    raw_variance: bool,
    grating_efficiency: f64,
    quantum_efficiency: f64,
}

#[derive(Serialize, Deserialize)]
pub struct EnsembleInfo {
    pub path: String,
    pub digest: String,
    pub seed: u64,
    pub arm: String,
    pub n_shots: usize,
    pub n_bins: usize,
}

#[derive(Serialize, Deserialize)]
pub struct ChannelMetrics {
    pub label: String,
    pub center_nm: f64,
    pub bandwidth_nm: f64,
    pub mean_counts: Option<f64>,
    pub fano: Option<f64>,
}

#[derive(Serialize, Deserialize)]
pub struct PairMetrics {
    pub a: String,
    pub b: String,
    pub pearson_normalized: Option<f64>,
    pub pearson_counts: Option<f64>,
    pub gemellity: Option<f64>,
}

#[derive(Serialize, Deserialize)]
pub struct WindowMetrics {
    pub label: String,
    pub lo_nm: f64,
    pub hi_nm: f64,
    pub convention: String,
    pub reduction_db: f64,
}

#[derive(Serialize, Deserialize)]
pub struct LocusPoint {
    pub lambda_nm: f64,
    pub conjugate_nm: Option<f64>,
}

#[derive(Serialize, Deserialize)]
pub struct Metrics {
    pub lambda0_nm: f64,
    pub channel_bandwidth_nm: f64,
    pub input: EnsembleInfo,
    pub reference: Option<EnsembleInfo>,
    pub masked_channels: usize,
    pub channels: Vec<ChannelMetrics>,
    pub pairs: Vec<PairMetrics>,
    pub windows: Vec<WindowMetrics>,
    pub conjugation_locus: Vec<LocusPoint>,
    pub map_csv: String,
}

fn load_any_ensemble(path: &Path) -> Result<EnsembleSpectra> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("csv") => specorr_core::io::import_csv(path, Arm::Filament),
        _ => specorr_core::io::load_ensemble(path),
    }
}

fn hex(digest: &[u8; 32]) -> String {
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn info_of(path: &Path, ens: &EnsembleSpectra) -> EnsembleInfo {
    EnsembleInfo {
        path: path.display().to_string(),
        digest: hex(ens.config_digest()),
        seed: ens.seed(),
        arm: ens.arm().name().to_string(),
        n_shots: ens.n_shots(),
        n_bins: ens.n_bins(),
    }
}

/// Lets trailing rounding in a Pearson value (|r| up to 1 + 1e-12) feed the
/// gemellity closed form, which requires |C| <= 1 exactly.
fn to_unit_interval(r: f64) -> f64 {
    r.clamp(-1.0, 1.0)
}

fn channel_rng_seed(base: u64, index: usize) -> u64 {
    // distinct Poisson substreams per channel so two channels never share
    // shot-noise randomness
    base ^ 0x9E37_79B9_7F4A_7C15u64.wrapping_mul(index as u64 + 1)
}

fn degenerate_to_none(r: Result<f64>) -> Result<Option<f64>> {
    match r {
        Ok(v) => Ok(Some(v)),
        Err(Error::Degenerate(_)) => Ok(None),
        Err(e) => Err(e),
    }
}

fn analyze(args: AnalyzeArgs) -> Result<()> {
    let ens = load_any_ensemble(&args.input)?;
    if ens.value_kind() != ValueKind::EnergyDensity {
        return Err(Error::InvalidInput(format!(
            "analyze needs an energy_density ensemble, got {:?}",
            ens.value_kind()
        )));
    }
    if ens.n_shots() < 2 {
        return Err(Error::Degenerate(format!(
            "analyze needs at least 2 shots to estimate correlations, got {}",
            ens.n_shots()
        )));
    }
    let reference = match &args.reference {
        Some(p) => Some((p.clone(), load_any_ensemble(p)?)),
        None => None,
    };
    if let Some((_, r)) = &reference {
        if r.config_digest() != ens.config_digest() {
            eprintln!(
                "warning: config digest mismatch between input ({}) and reference ({})",
                hex(ens.config_digest()),
                hex(r.config_digest())
            );
        }
    }
    if !args.windows.is_empty() && reference.is_none() {
        return Err(config_error(
            "--window compares arms and needs --reference",
        ));
    }

    let windows: Vec<(String, f64, f64)> = args
        .windows
        .iter()
        .map(|w| -> Result<(String, f64, f64)> {
            let parts: Vec<&str> = w.split(':').collect();
            let bad = || config_error(format!("--window expects `lo:hi` in nm, got `{w}`"));
            if parts.len() != 2 {
                return Err(bad());
            }
            let lo: f64 = parts[0].trim().parse().map_err(|_| bad())?;
            let hi: f64 = parts[1].trim().parse().map_err(|_| bad())?;
            if !(lo < hi) {
                return Err(bad());
            }
            Ok((format!("{lo}:{hi}"), lo, hi))
        })
        .collect::<Result<_>>()?;

    fs::create_dir_all(&args.out_dir).map_err(|source| Error::Io {
        path: args.out_dir.display().to_string(),
        source,
    })?;

    // correlation map on per-shot normalized spectra
    let normalized = normalize_rows(&ens)?;
    let map = correlation_map(&normalized, args.lambda0)?;
    let map_path = args.out_dir.join("map.csv");
    write_map_csv(&map, &map_path)?;

    // photon-count series per channel
    let detector = DetectorModel {
        grating_efficiency: args.grating_efficiency,
        quantum_efficiency: args.quantum_efficiency,
        poisson: args.poisson,
    };
    let channels: Vec<Channel> = args
        .channels
        .iter()
        .map(|&c| Channel::new(c, args.channel_bandwidth, format!("{c}nm")))
        .collect();

    let mut counts = Vec::new();
    let mut normalized_series = Vec::new();
    for (idx, ch) in channels.iter().enumerate() {
        counts.push(channel_counts(
            &ens,
            ch,
            &detector,
            channel_rng_seed(ens.seed(), idx),
        )?);
        normalized_series.push(window_series(&normalized, ch.lo(), ch.hi())?);
    }

    let mut channel_metrics = Vec::new();
    for (ch, series) in channels.iter().zip(&counts) {
        let mean = series.iter().sum::<f64>() / series.len() as f64;
        channel_metrics.push(ChannelMetrics {
            label: ch.label.clone(),
            center_nm: ch.center_nm,
            bandwidth_nm: ch.bandwidth_nm,
            mean_counts: Some(mean),
            fano: degenerate_to_none(fano(series))?,
        });
    }

    let mut pair_metrics = Vec::new();
    for i in 0..channels.len() {
        for j in (i + 1)..channels.len() {
            let r_norm =
                degenerate_to_none(pearson(&normalized_series[i], &normalized_series[j]))?;
            let r_counts = degenerate_to_none(pearson(&counts[i], &counts[j]))?;
            let g = match (
                channel_metrics[i].fano,
                channel_metrics[j].fano,
                r_counts,
            ) {
                (Some(f1), Some(f2), Some(c)) => Some(gemellity(f1, f2, to_unit_interval(c))?),
                _ => None,
            };
            pair_metrics.push(PairMetrics {
                a: channels[i].label.clone(),
                b: channels[j].label.clone(),
                pearson_normalized: r_norm,
                pearson_counts: r_counts,
                gemellity: g,
            });
        }
    }

    let mut window_metrics = Vec::new();
    if let Some((_, ref_ens)) = &reference {
        for (label, lo, hi) in &windows {
            let fil = window_series(&ens, *lo, *hi)?;
            let refr = window_series(ref_ens, *lo, *hi)?;
            let db = if args.raw_variance {
                noise_reduction_db_raw_variance(&fil, &refr)?
            } else {
                noise_reduction_db(&fil, &refr)?
            };
            window_metrics.push(WindowMetrics {
                label: label.clone(),
                lo_nm: *lo,
                hi_nm: *hi,
                convention: if args.raw_variance {
                    "raw_variance".into()
                } else {
                    "rin".into()
                },
                reduction_db: db,
            });
        }
    }

    let locus = conjugation_locus(args.lambda0, map.bin_centers())
        .into_iter()
        .zip(map.bin_centers())
        .map(|(conj, &l)| LocusPoint {
            lambda_nm: l,
            conjugate_nm: conj,
        })
        .collect();

    let metrics = Metrics {
        lambda0_nm: args.lambda0,
        channel_bandwidth_nm: args.channel_bandwidth,
        input: info_of(&args.input, &ens),
        reference: reference.as_ref().map(|(p, r)| info_of(p, r)),
        masked_channels: (0..map.n_bins()).filter(|&i| map.channel_masked(i)).count(),
        channels: channel_metrics,
        pairs: pair_metrics,
        windows: window_metrics,
        conjugation_locus: locus,
        map_csv: map_path.display().to_string(),
    };

    let metrics_path = args.out_dir.join("metrics.json");
    let json = serde_json::to_string_pretty(&metrics)
        .map_err(|e| Error::Format(format!("cannot serialize metrics: {e}")))?;
    specorr_core::io::atomic_write(&metrics_path, json.as_bytes())?;

    println!("wrote {}", map_path.display());
    println!("wrote {}", metrics_path.display());
    println!(
        "{} channels masked of {}",
        metrics.masked_channels,
        map.n_bins()
    );
    Ok(())
}

fn write_map_csv(map: &CorrelationMap, path: &Path) -> Result<()> {
    let mut out = String::new();
    out.push_str("lambda_nm");
    for c in map.bin_centers() {
        out.push(',');
        out.push_str(&format!("{c}"));
    }
    out.push('\n');
    for i in 0..map.n_bins() {
        out.push_str(&format!("{}", map.bin_centers()[i]));
        for j in 0..map.n_bins() {
            out.push(',');
            match map.get(i, j) {
                Some(r) => out.push_str(&format!("{r}")),
                None => out.push_str("NA"),
            }
        }
        out.push('\n');
    }
    specorr_core::io::atomic_write(path, out.as_bytes())
}

// ---------------------------------------------------------------------------
// report

fn report(path: &Path, force: bool) -> Result<()> {
    let text = fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })?;
    let metrics: Metrics = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: not a metrics file: {e}", path.display())))?;

    if let Some(r) = &metrics.reference {
        if r.digest != metrics.input.digest && !force {
            return Err(config_error(format!(
                "config digest mismatch between filament ({}) and reference ({}); \
                 rerun with --force to compare anyway",
                metrics.input.digest, r.digest
            )));
        }
    }

    let l0 = metrics.lambda0_nm;
    println!("run: {} (digest {})", metrics.input.path, metrics.input.digest);
    if let Some(r) = &metrics.reference {
        println!("reference: {} (digest {})", r.path, r.digest);
    }
    println!(
        "lambda0 = {l0} nm; {} of {} map channels masked",
        metrics.masked_channels,
        metrics.conjugation_locus.len()
    );

    if !metrics.channels.is_empty() {
        println!("\nchannels:");
        for ch in &metrics.channels {
            let fano = ch
                .fano
                .map(|f| format!("{f:.3e}"))
                .unwrap_or_else(|| "undefined".into());
            let mean = ch
                .mean_counts
                .map(|m| format!("{m:.3e}"))
                .unwrap_or_else(|| "-".into());
            println!(
                "  {:<12} {:7.2} nm  mean counts {:>10}  F = {}",
                ch.label, ch.center_nm, mean, fano
            );
        }
    }

    let half_bw = metrics.channel_bandwidth_nm / 2.0;
    let center_of = |label: &str| {
        metrics
            .channels
            .iter()
            .find(|c| c.label == label)
            .map(|c| c.center_nm)
    };
    if !metrics.pairs.is_empty() {
        println!("\nchannel pairs (r on normalized spectra):");
        for p in &metrics.pairs {
            let (Some(ca), Some(cb)) = (center_of(&p.a), center_of(&p.b)) else {
                continue;
            };
            let conj_of_a = conjugate_wavelength(l0, ca).ok();
            let is_conjugate = conj_of_a.map(|c| (c - cb).abs() <= half_bw).unwrap_or(false);
            let has_fundamental = (ca - l0).abs() <= half_bw || (cb - l0).abs() <= half_bw;
            let kind = if is_conjugate {
                "conjugate pair     expect r > 0"
            } else if has_fundamental {
                "wing-fundamental   expect r < 0"
            } else {
                "other              no expectation"
            };
            let verdict = match (p.pearson_normalized, is_conjugate, has_fundamental) {
                (Some(r), true, _) => {
                    if r > 0.0 {
                        "OK"
                    } else {
                        "UNEXPECTED"
                    }
                }
                (Some(r), _, true) => {
                    if r < 0.0 {
                        "OK"
                    } else {
                        "UNEXPECTED"
                    }
                }
                (Some(_), _, _) => "-",
                (None, _, _) => "undefined",
            };
            let r = p
                .pearson_normalized
                .map(|r| format!("{r:+.3}"))
                .unwrap_or_else(|| "  n/a".into());
            let g = p
                .gemellity
                .map(|g| format!("{g:.3e}"))
                .unwrap_or_else(|| "n/a".into());
            println!(
                "  {:<12}-{:<12} {kind}  r = {r}  G = {g}  {verdict}",
                p.a, p.b
            );
        }
        let min_g = metrics
            .pairs
            .iter()
            .filter_map(|p| p.gemellity)
            .fold(f64::INFINITY, f64::min);
        if min_g.is_finite() {
            let class = if min_g > 1.0 {
                "classical (G >> 1)"
            } else {
                "nonclassical (G < 1)"
            };
            println!("  minimum gemellity over pairs: {min_g:.3e} -> {class}");
        }
    }

    if !metrics.windows.is_empty() {
        println!("\nfilter windows vs reference ({}):", metrics.windows[0].convention);
        for w in &metrics.windows {
            let centered = l0 > w.lo_nm && l0 < w.hi_nm;
            let kind = if centered {
                "straddles lambda0, expect reduction  "
            } else {
                "one-sided, expect no reduction       "
            };
            let verdict = if centered == (w.reduction_db > 0.0) {
                "OK"
            } else {
                "UNEXPECTED"
            };
            println!(
                "  [{:7.2}, {:7.2}] nm  {kind} {:+.3} dB  {verdict}",
                w.lo_nm, w.hi_nm, w.reduction_db
            );
        }
    }
    Ok(())
}
