use serde::{Deserialize, Serialize};

/// A spectral peak. Frequencies in the units of the grid passed in.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Peak {
    /// Sub-bin centre from a parabola through the three top samples.
    pub center: f64,
    /// Full width at half maximum, linearly interpolated.
    pub width: f64,
    pub height: f64,
    /// Prominence in the domain the detection ran in.
    pub prominence: f64,
    pub index: usize,
}

/// Local maxima of `row` whose prominence is at least `min_prominence`.
pub fn detect_peaks(row: &[f64], freqs: &[f64], min_prominence: f64) -> Vec<Peak> {
    find_peaks(row, row, freqs, min_prominence)
}

/// As [`detect_peaks`], with prominence measured in decades so that weak
/// and strong peaks on a spectrum spanning many orders of magnitude are
/// treated alike. Non-positive samples are treated as the smallest positive
/// sample.
pub fn detect_peaks_log(row: &[f64], freqs: &[f64], min_decades: f64) -> Vec<Peak> {
    let floor = row.iter().copied().filter(|v| *v > 0.0).fold(f64::INFINITY, f64::min);
    if !floor.is_finite() {
        return Vec::new();
    }
    let score: Vec<f64> = row.iter().map(|v| v.max(floor).log10()).collect();
    find_peaks(row, &score, freqs, min_decades)
}

fn find_peaks(row: &[f64], score: &[f64], freqs: &[f64], min_prominence: f64) -> Vec<Peak> {
    let n = row.len().min(freqs.len());
    let mut peaks = Vec::new();
    if n < 3 {
        return peaks;
    }
    let mut i = 1;
    while i < n - 1 {
        if score[i] > score[i - 1] {
            // extend over a plateau and require a descent after it
            let mut j = i;
            while j + 1 < n && score[j + 1] == score[i] {
                j += 1;
            }
            if j + 1 < n && score[j + 1] < score[i] {
                let top = (i + j) / 2;
                let (prom, lb, rb) = prominence(score, top);
                if prom >= min_prominence {
                    peaks.push(Peak {
                        center: refine_center(row, freqs, top),
                        width: half_width(row, freqs, top, lb, rb),
                        height: row[top],
                        prominence: prom,
                        index: top,
                    });
                }
            }
            i = j + 1;
        } else {
            i += 1;
        }
    }
    peaks
}

/// Prominence and the indices of the lowest points on each side before a
/// higher sample.
fn prominence(score: &[f64], i: usize) -> (f64, usize, usize) {
    let top = score[i];
    let (mut lmin, mut lb) = (top, i);
    let mut j = i;
    while j > 0 {
        j -= 1;
        if score[j] > top {
            break;
        }
        if score[j] < lmin {
            lmin = score[j];
            lb = j;
        }
    }
    let (mut rmin, mut rb) = (top, i);
    let mut j = i;
    while j + 1 < score.len() {
        j += 1;
        if score[j] > top {
            break;
        }
        if score[j] < rmin {
            rmin = score[j];
            rb = j;
        }
    }
    (top - lmin.max(rmin), lb, rb)
}

fn refine_center(row: &[f64], freqs: &[f64], i: usize) -> f64 {
    let (a, b, c) = (row[i - 1], row[i], row[i + 1]);
    let (a, b, c) = if a > 0.0 && b > 0.0 && c > 0.0 { (a.ln(), b.ln(), c.ln()) } else { (a, b, c) };
    let denom = a - 2.0 * b + c;
    let offset = if denom < 0.0 { (0.5 * (a - c) / denom).clamp(-0.5, 0.5) } else { 0.0 };
    if offset >= 0.0 {
        freqs[i] + offset * (freqs[i + 1] - freqs[i])
    } else {
        freqs[i] + offset * (freqs[i] - freqs[i - 1])
    }
}

/// FWHM; the half-maximum search stops at the prominence bases.
fn half_width(row: &[f64], freqs: &[f64], i: usize, lb: usize, rb: usize) -> f64 {
    let half = 0.5 * row[i];
    let cross = |j: usize, k: usize| {
        // linear interpolation between samples j (below) and k (above)
        let t = (half - row[j]) / (row[k] - row[j]);
        freqs[j] + t * (freqs[k] - freqs[j])
    };
    let mut left = freqs[lb];
    let mut j = i;
    while j > lb {
        if row[j - 1] < half {
            left = cross(j - 1, j);
            break;
        }
        j -= 1;
    }
    let mut right = freqs[rb];
    let mut j = i;
    while j < rb {
        if row[j + 1] < half {
            right = cross(j + 1, j);
            break;
        }
        j += 1;
    }
    let w = right - left;
    if w > 0.0 {
        w
    } else {
        freqs[i.min(freqs.len() - 2) + 1] - freqs[i.min(freqs.len() - 2)]
    }
}
