//! High-pass filtering and sample aggregation.

use ndarray::{Array2, ArrayView1};

use crate::trace::TraceSet;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterSpec {
    pub cutoff_hz: f64,
    pub order: usize,
}

impl Default for FilterSpec {
    fn default() -> Self {
        Self {
            cutoff_hz: 125e3,
            order: 4,
        }
    }
}

#[derive(Debug, Clone, thiserror::Error, PartialEq)]
pub enum DspError {
    #[error("cutoff {cutoff_hz} Hz must lie in (0, {nyquist_hz}) Hz")]
    BadCutoff { cutoff_hz: f64, nyquist_hz: f64 },
    #[error("filter order must be at least 1")]
    BadOrder,
    #[error("trace of {len} samples is too short for padding of {padlen}")]
    TooShort { len: usize, padlen: usize },
    #[error("aggregation window must be at least 1")]
    BadWindow,
}

/// Second-order section `b0 + b1 z^-1 + b2 z^-2 / 1 + a1 z^-1 + a2 z^-2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    /// Complex response at normalized angular frequency `w` (radians per sample).
    fn response(&self, w: f64) -> (f64, f64) {
        let eval = |c: &[f64; 3]| {
            let re = c[0] + c[1] * w.cos() + c[2] * (2.0 * w).cos();
            let im = -c[1] * w.sin() - c[2] * (2.0 * w).sin();
            (re, im)
        };
        let (nr, ni) = eval(&self.b);
        let (dr, di) = eval(&self.a);
        let den = dr * dr + di * di;
        ((nr * dr + ni * di) / den, (ni * dr - nr * di) / den)
    }

    /// Filter state that makes a unit step input look like it has always been applied.
    fn step_state(&self) -> [f64; 2] {
        let [b0, b1, b2] = self.b;
        let [_, a1, a2] = self.a;
        let y = (b0 + b1 + b2) / (1.0 + a1 + a2);
        let z2 = b2 - a2 * y;
        [b1 - a1 * y + z2, z2]
    }
}

/// Digital Butterworth high-pass in second-order sections, via the bilinear transform.
pub fn butterworth_highpass(spec: &FilterSpec, fs: f64) -> Result<Vec<Biquad>, DspError> {
    let nyquist_hz = fs / 2.0;
    if !(spec.cutoff_hz > 0.0 && spec.cutoff_hz < nyquist_hz) {
        return Err(DspError::BadCutoff {
            cutoff_hz: spec.cutoff_hz,
            nyquist_hz,
        });
    }
    if spec.order == 0 {
        return Err(DspError::BadOrder);
    }
    let n = spec.order;
    let k = 2.0 * fs;
    let wc = k * (std::f64::consts::PI * spec.cutoff_hz / fs).tan();
    let mut sections = Vec::new();
    // Upper-half-plane prototype poles; conjugates are implied by the biquads.
    for i in 0..n / 2 {
        let theta = std::f64::consts::PI * (2 * i + n + 1) as f64 / (2 * n) as f64;
        let (pr, pi) = (theta.cos(), theta.sin());
        // High-pass mapping s -> wc / s.
        let m = pr * pr + pi * pi;
        let (sr, si) = (wc * pr / m, -wc * pi / m);
        // Bilinear transform z = (k + s) / (k - s).
        let (nr, ni) = (k + sr, si);
        let (dr, di) = (k - sr, -si);
        let d = dr * dr + di * di;
        let (zr, zi) = ((nr * dr + ni * di) / d, (ni * dr - nr * di) / d);
        let a = [1.0, -2.0 * zr, zr * zr + zi * zi];
        // Unity gain at Nyquist: b(-1) = 4g, a(-1) = 1 - a1 + a2.
        let g = (a[0] - a[1] + a[2]) / 4.0;
        sections.push(Biquad {
            b: [g, -2.0 * g, g],
            a,
        });
    }
    if n % 2 == 1 {
        let s = -wc; // real prototype pole at -1
        let z = (k + s) / (k - s);
        let g = (1.0 + z) / 2.0;
        sections.push(Biquad {
            b: [g, -g, 0.0],
            a: [1.0, -z, 0.0],
        });
    }
    Ok(sections)
}

/// Magnitude of the cascade at `f_hz`.
pub fn magnitude_response(sections: &[Biquad], f_hz: f64, fs: f64) -> f64 {
    let w = 2.0 * std::f64::consts::PI * f_hz / fs;
    sections
        .iter()
        .map(|s| {
            let (re, im) = s.response(w);
            (re * re + im * im).sqrt()
        })
        .product()
}

fn sos_filter(sections: &[Biquad], x: &mut [f64], level: f64) {
    let mut scale = level;
    for s in sections {
        let [zi1, zi2] = s.step_state();
        let (mut z1, mut z2) = (zi1 * scale, zi2 * scale);
        let [b0, b1, b2] = s.b;
        let [_, a1, a2] = s.a;
        for v in x.iter_mut() {
            let u = *v;
            let y = b0 * u + z1;
            z1 = b1 * u - a1 * y + z2;
            z2 = b2 * u - a2 * y;
            *v = y;
        }
        scale *= (b0 + b1 + b2) / (1.0 + a1 + a2);
    }
}

/// Minimum edge padding for a cascade, in samples.
pub fn min_padlen(sections: &[Biquad]) -> usize {
    let trailing_zero = sections.iter().filter(|s| s.b[2] == 0.0 && s.a[2] == 0.0).count();
    3 * (2 * sections.len() + 1 - trailing_zero)
}

/// Edge padding for a cutoff: three filter time constants, capped by the trace length.
pub fn padlen(sections: &[Biquad], cutoff_hz: f64, fs: f64, len: usize) -> usize {
    let tau = fs / (2.0 * std::f64::consts::PI * cutoff_hz);
    ((3.0 * tau).ceil() as usize)
        .max(min_padlen(sections))
        .min(len.saturating_sub(1))
}

/// Forward-backward filtering. Edges are mirrored over `pad` samples and both
/// passes start in the steady state of the padded signal's mean, so short
/// traces do not turn their edge samples into a slow transient.
pub fn filtfilt(sections: &[Biquad], x: &[f64], pad: usize) -> Result<Vec<f64>, DspError> {
    let min = min_padlen(sections);
    if x.len() <= min || pad < min || pad >= x.len() {
        return Err(DspError::TooShort {
            len: x.len(),
            padlen: pad.max(min),
        });
    }
    let n = x.len();
    let mut ext = Vec::with_capacity(n + 2 * pad);
    ext.extend((1..=pad).rev().map(|i| x[i]));
    ext.extend_from_slice(x);
    ext.extend((1..=pad).map(|i| x[n - 1 - i]));

    let level = ext.iter().sum::<f64>() / ext.len() as f64;
    sos_filter(sections, &mut ext, level);
    ext.reverse();
    let level = ext.iter().sum::<f64>() / ext.len() as f64;
    sos_filter(sections, &mut ext, level);
    ext.reverse();
    Ok(ext[pad..pad + n].to_vec())
}

/// Zero-phase Butterworth high-pass of one trace.
pub fn high_pass(trace: &[f64], spec: &FilterSpec, fs: f64) -> Result<Vec<f64>, DspError> {
    let sections = butterworth_highpass(spec, fs)?;
    let pad = padlen(&sections, spec.cutoff_hz, fs, trace.len());
    filtfilt(&sections, trace, pad)
}

/// Means of non-overlapping windows of `n` samples; a short tail window is
/// averaged over its own length.
pub fn aggregate(trace: &[f64], n: usize) -> Result<Vec<f64>, DspError> {
    if n == 0 {
        return Err(DspError::BadWindow);
    }
    if n == 1 {
        return Ok(trace.to_vec());
    }
    Ok(trace
        .chunks(n)
        .map(|w| w.iter().sum::<f64>() / w.len() as f64)
        .collect())
}

fn map_rows(
    set: &TraceSet,
    out_len: usize,
    mut f: impl FnMut(ArrayView1<f32>, &mut Vec<f64>) -> Result<Vec<f64>, DspError>,
) -> Result<TraceSet, DspError> {
    let mut out = Array2::<f32>::zeros((set.n_traces(), out_len));
    let mut buf = Vec::with_capacity(set.n_samples());
    for (row, mut dst) in set.samples.rows().into_iter().zip(out.rows_mut()) {
        let y = f(row, &mut buf)?;
        for (d, v) in dst.iter_mut().zip(y) {
            *d = v as f32;
        }
    }
    Ok(set.with_samples(out))
}

/// Applies [`high_pass`] to every trace.
pub fn high_pass_set(set: &TraceSet, spec: &FilterSpec) -> Result<TraceSet, DspError> {
    let sections = butterworth_highpass(spec, set.sample_rate_hz)?;
    let pad = padlen(&sections, spec.cutoff_hz, set.sample_rate_hz, set.n_samples());
    map_rows(set, set.n_samples(), |row, buf| {
        buf.clear();
        buf.extend(row.iter().map(|&v| v as f64));
        filtfilt(&sections, buf, pad)
    })
}

/// Applies [`aggregate`] to every trace. The sample rate is divided by `n`.
pub fn aggregate_set(set: &TraceSet, n: usize) -> Result<TraceSet, DspError> {
    if n == 0 {
        return Err(DspError::BadWindow);
    }
    if n == 1 {
        return Ok(set.clone());
    }
    let out_len = set.n_samples().div_ceil(n);
    let mut out = map_rows(set, out_len, |row, buf| {
        buf.clear();
        buf.extend(row.iter().map(|&v| v as f64));
        aggregate(buf, n)
    })?;
    out.sample_rate_hz = set.sample_rate_hz / n as f64;
    Ok(out)
}
