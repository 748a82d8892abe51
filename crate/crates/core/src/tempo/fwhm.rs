//! Full width at half maximum of a per-frame probability curve, the proxy
//! for an instance's visual tempo: slower actions spread their probability
//! mass over more frames.

/// FWHM in frame-index units. Half level is max/2; the leftmost and
/// rightmost crossings are located with linear interpolation between
/// adjacent samples. A side that never descends to the half level extends
/// to the curve boundary, so a constant (or all-zero) curve spans the full
/// length. The width is assembled as `span - (left_frac + right_frac)`,
/// which makes temporal reflection an exact no-op in floating point.
pub fn fwhm(values: &[f64]) -> f64 {
    let n = values.len();
    if n <= 1 {
        return 0.0;
    }
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max > 0.0) {
        return (n - 1) as f64;
    }
    let half = max / 2.0;

    let (li, lf) = if values[0] >= half {
        (0usize, 0.0)
    } else {
        let mut i = 1;
        while values[i] < half {
            i += 1;
        }
        (i - 1, (half - values[i - 1]) / (values[i] - values[i - 1]))
    };

    let (ri, rf) = if values[n - 1] >= half {
        (n - 1, 0.0)
    } else {
        let mut j = n - 2;
        while values[j] < half {
            j -= 1;
        }
        (j + 1, (half - values[j + 1]) / (values[j] - values[j + 1]))
    };

    (ri - li) as f64 - (lf + rf)
}
