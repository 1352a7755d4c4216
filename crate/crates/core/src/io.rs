//! Ensemble persistence: the `FNSE` binary format and a plain-text CSV
//! exchange format for external measured spectra. All writes are atomic
//! (write to a temp file, then rename).

use std::fs::{self, File};
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::ensemble::{Arm, EnsembleSpectra, ValueKind};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"FNSE";
const VERSION: u16 = 1;
const HEADER_LEN: usize = 4 + 2 + 4 + 4 + 8 + 8 + 1 + 8 + 1 + 32;

fn io_err(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes `bytes` to `path` atomically.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| io_err(path, e))?;
    tmp.write_all(bytes).map_err(|e| io_err(path, e))?;
    tmp.flush().map_err(|e| io_err(path, e))?;
    tmp.persist(path)
        .map_err(|e| io_err(path, e.error))
        .map(|_| ())
}

/// Serializes an ensemble to the `FNSE` binary format at `path`.
///
/// Layout (little-endian): magic `FNSE`, version u16, n_shots u32, n_bins
/// u32, bin_width f64 (nm), first bin center f64 (nm), value_kind u8,
/// seed u64, arm u8, config digest (32 bytes), then the row-major f64
/// matrix.
pub fn save_ensemble(ensemble: &EnsembleSpectra, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let n_shots = ensemble.n_shots();
    let n_bins = ensemble.n_bins();
    let mut bytes = Vec::with_capacity(HEADER_LEN + n_shots * n_bins * 8);
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&VERSION.to_le_bytes());
    bytes.extend_from_slice(&(n_shots as u32).to_le_bytes());
    bytes.extend_from_slice(&(n_bins as u32).to_le_bytes());
    bytes.extend_from_slice(&ensemble.bin_width().to_le_bytes());
    bytes.extend_from_slice(&ensemble.bin_centers()[0].to_le_bytes());
    bytes.push(ensemble.value_kind().as_u8());
    bytes.extend_from_slice(&ensemble.seed().to_le_bytes());
    bytes.push(ensemble.arm().as_u8());
    bytes.extend_from_slice(ensemble.config_digest());
    for v in ensemble.values() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    atomic_write(path, &bytes)
}

/// Reads an ensemble written by [`save_ensemble`]. The round trip is
/// bit-exact.
pub fn load_ensemble(path: impl AsRef<Path>) -> Result<EnsembleSpectra> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| io_err(path, e))?;

    if bytes.len() < HEADER_LEN {
        return Err(Error::Format(format!(
            "truncated file: {} bytes is shorter than the {HEADER_LEN}-byte header",
            bytes.len()
        )));
    }
    if &bytes[0..4] != MAGIC {
        return Err(Error::Format("bad magic: not an FNSE file".into()));
    }
    let version = u16::from_le_bytes(bytes[4..6].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Format(format!(
            "unsupported FNSE version {version}, expected {VERSION}"
        )));
    }
    let n_shots = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let n_bins = u32::from_le_bytes(bytes[10..14].try_into().unwrap()) as usize;
    let bin_width = f64::from_le_bytes(bytes[14..22].try_into().unwrap());
    let first_center = f64::from_le_bytes(bytes[22..30].try_into().unwrap());
    let value_kind = ValueKind::from_u8(bytes[30])?;
    let seed = u64::from_le_bytes(bytes[31..39].try_into().unwrap());
    let arm = Arm::from_u8(bytes[39])?;
    let mut digest = [0u8; 32];
    digest.copy_from_slice(&bytes[40..72]);

    let expected = n_shots
        .checked_mul(n_bins)
        .and_then(|n| n.checked_mul(8))
        .ok_or_else(|| Error::Format("dimension overflow".into()))?;
    let payload = &bytes[HEADER_LEN..];
    if payload.len() < expected {
        return Err(Error::Format(format!(
            "truncated payload: have {} bytes, header promises {expected}",
            payload.len()
        )));
    }
    if payload.len() > expected {
        return Err(Error::Format(format!(
            "dimension mismatch: {} trailing bytes beyond {n_shots} x {n_bins} matrix",
            payload.len() - expected
        )));
    }

    let data: Vec<f64> = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let centers: Vec<f64> = (0..n_bins)
        .map(|j| first_center + j as f64 * bin_width)
        .collect();
    EnsembleSpectra::new(
        centers, bin_width, n_shots, data, value_kind, seed, arm, digest,
    )
    .map_err(|e| Error::Format(format!("invalid ensemble payload: {e}")))
}

/// Writes the ensemble as CSV: bin centers as the header row, one shot per
/// line. Values carry 17 significant digits, enough to reproduce every f64
/// exactly.
pub fn export_csv(ensemble: &EnsembleSpectra, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut buf = BufWriter::new(Vec::new());
    let fmt = |v: f64| format!("{v:.16e}");
    let header: Vec<String> = ensemble.bin_centers().iter().map(|&c| fmt(c)).collect();
    writeln!(buf, "{}", header.join(",")).map_err(|e| io_err(path, e))?;
    for shot in 0..ensemble.n_shots() {
        let row: Vec<String> = ensemble.row(shot).iter().map(|&v| fmt(v)).collect();
        writeln!(buf, "{}", row.join(",")).map_err(|e| io_err(path, e))?;
    }
    let bytes = buf.into_inner().map_err(|e| io_err(path, e.into_error()))?;
    atomic_write(path, &bytes)
}

/// Reads a CSV written by [`export_csv`] or produced from external measured
/// spectra (uniformly spaced bin centers, non-negative values). The result
/// carries energy-density value kind, seed 0, the given arm, and a zero
/// digest.
pub fn import_csv(path: impl AsRef<Path>, arm: Arm) -> Result<EnsembleSpectra> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let mut lines = text.lines().enumerate();

    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Format("empty CSV: missing bin-center header row".into()))?;
    let centers: Vec<f64> = header
        .split(',')
        .enumerate()
        .map(|(col, s)| {
            s.trim().parse::<f64>().map_err(|_| {
                Error::Format(format!("header column {}: `{s}` is not a number", col + 1))
            })
        })
        .collect::<Result<_>>()?;
    if centers.len() < 2 {
        return Err(Error::Format(
            "need at least 2 bins to infer the bin width".into(),
        ));
    }
    let width = centers[1] - centers[0];
    if !(width > 0.0) {
        return Err(Error::Format("bin centers must be strictly increasing".into()));
    }
    for w in centers.windows(2) {
        if ((w[1] - w[0]) - width).abs() > 1e-9 * width {
            return Err(Error::Format(format!(
                "bin centers are not uniformly spaced: {} then {}",
                width,
                w[1] - w[0]
            )));
        }
    }

    let mut data = Vec::new();
    let mut n_shots = 0;
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let row: Vec<f64> = line
            .split(',')
            .enumerate()
            .map(|(col, s)| {
                s.trim().parse::<f64>().map_err(|_| {
                    Error::Format(format!(
                        "line {}, column {}: `{s}` is not a number",
                        idx + 1,
                        col + 1
                    ))
                })
            })
            .collect::<Result<_>>()?;
        if row.len() != centers.len() {
            return Err(Error::Format(format!(
                "line {}: {} values, header has {} bins",
                idx + 1,
                row.len(),
                centers.len()
            )));
        }
        data.extend(row);
        n_shots += 1;
    }
    if n_shots == 0 {
        return Err(Error::Format("CSV has a header but no shots".into()));
    }

    EnsembleSpectra::new(
        centers,
        width,
        n_shots,
        data,
        ValueKind::EnergyDensity,
        0,
        arm,
        [0; 32],
    )
    .map_err(|e| Error::Format(format!("invalid CSV data: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_ensemble(seed: u64, n_shots: usize, n_bins: usize) -> EnsembleSpectra {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let centers: Vec<f64> = (0..n_bins).map(|j| 785.15 + 0.3 * j as f64).collect();
        let data: Vec<f64> = (0..n_shots * n_bins)
            .map(|_| rng.random::<f64>() * 10f64.powi(rng.random_range(-300..3)))
            .collect();
        EnsembleSpectra::new(
            centers,
            0.3,
            n_shots,
            data,
            ValueKind::EnergyDensity,
            seed,
            Arm::Filament,
            [0xAB; 32],
        )
        .unwrap()
    }

    #[test]
    fn binary_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.fnse");
        let ens = random_ensemble(5, 17, 23);
        save_ensemble(&ens, &path).unwrap();
        let back = load_ensemble(&path).unwrap();
        assert_eq!(ens.values(), back.values());
        assert_eq!(ens.bin_centers(), back.bin_centers());
        assert_eq!(ens.seed(), back.seed());
        assert_eq!(ens.arm(), back.arm());
        assert_eq!(ens.value_kind(), back.value_kind());
        assert_eq!(ens.config_digest(), back.config_digest());
    }

    #[test]
    fn truncated_file_reports_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.fnse");
        let ens = random_ensemble(6, 4, 8);
        save_ensemble(&ens, &path).unwrap();
        let bytes = fs::read(&path).unwrap();
        fs::write(&path, &bytes[..bytes.len() - 11]).unwrap();
        let err = load_ensemble(&path).unwrap_err();
        assert!(err.to_string().contains("truncated"), "{err}");
    }

    #[test]
    fn bad_magic_and_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.fnse");
        let ens = random_ensemble(7, 2, 4);
        save_ensemble(&ens, &path).unwrap();

        let mut bytes = fs::read(&path).unwrap();
        bytes[0] = b'X';
        fs::write(&path, &bytes).unwrap();
        assert!(load_ensemble(&path).unwrap_err().to_string().contains("magic"));

        let mut bytes = fs::read(&path).unwrap();
        bytes[0] = b'F';
        bytes[4] = 99;
        fs::write(&path, &bytes).unwrap();
        assert!(load_ensemble(&path)
            .unwrap_err()
            .to_string()
            .contains("version"));
    }

    #[test]
    fn csv_round_trip_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("e.csv");
        let ens = random_ensemble(8, 9, 12);
        export_csv(&ens, &path).unwrap();
        let back = import_csv(&path, Arm::Filament).unwrap();
        assert_eq!(ens.values(), back.values());
        assert_eq!(ens.n_bins(), back.n_bins());
    }

    #[test]
    fn csv_rejects_negative_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(&path, "800.0,801.0\n1.0,-0.5\n").unwrap();
        let err = import_csv(&path, Arm::Reference).unwrap_err();
        assert!(err.to_string().contains(">= 0"), "{err}");
    }

    #[test]
    fn csv_rejects_ragged_rows_and_bad_spacing() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(&path, "800.0,801.0\n1.0\n").unwrap();
        assert!(import_csv(&path, Arm::Filament).is_err());
        fs::write(&path, "800.0,801.0,803.5\n1.0,2.0,3.0\n").unwrap();
        assert!(import_csv(&path, Arm::Filament).is_err());
    }
}
