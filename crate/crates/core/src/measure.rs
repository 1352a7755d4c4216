//! Width measurements on sampled curves.

/// Full width at half maximum of `y` over `x`, using the outermost crossings
/// of the half-max level with linear interpolation. For a unimodal curve this
/// is the usual FWHM; for an oscillatory one (e.g. an SPM-broadened spectrum)
/// it is the width of the envelope above half max.
///
/// Returns `None` when the curve never rises above half max on both flanks
/// (fewer than 3 samples, all-zero data, or a peak clipped at the edge).
pub fn fwhm(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 3 {
        return None;
    }
    let peak = y.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(peak > 0.0) {
        return None;
    }
    let half = peak / 2.0;

    let mut left = None;
    for i in 1..y.len() {
        if y[i - 1] < half && y[i] >= half {
            let f = (half - y[i - 1]) / (y[i] - y[i - 1]);
            left = Some(x[i - 1] + f * (x[i] - x[i - 1]));
            break;
        }
    }
    let mut right = None;
    for i in (1..y.len()).rev() {
        if y[i] < half && y[i - 1] >= half {
            let f = (half - y[i]) / (y[i - 1] - y[i]);
            right = Some(x[i] + f * (x[i - 1] - x[i]));
            break;
        }
    }
    match (left, right) {
        (Some(l), Some(r)) if r > l => Some(r - l),
        _ => None,
    }
}
