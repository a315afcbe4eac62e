//! Core data types shared by the simulator, the synthesizer and the attacks.

use std::fmt;

use ndarray::Array2;

/// Acquisition sample rate of every synthesized trace.
pub const SAMPLE_RATE_HZ: f64 = 250e6;
/// ADC resolution of the modeled oscilloscope.
pub const RESOLUTION_BITS: u32 = 12;

/// Lowest frequency the clock tile can be asked for, in MHz.
pub const MIN_FREQUENCY_MHZ: f64 = 5.0;
/// Highest frequency the clock tile can be asked for, in MHz.
pub const MAX_FREQUENCY_MHZ: f64 = 800.0;
/// Voltage window accepted in scenario files.
pub const MIN_VOLTAGE_V: f64 = 0.75;
pub const MAX_VOLTAGE_V: f64 = 1.05;

/// A clock frequency on the 0.125 MHz grid, stored as an integer count of eighths of a MHz.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Frequency(u32);

impl Frequency {
    pub const fn from_eighths(eighths: u32) -> Self {
        Self(eighths)
    }

    /// Converts a MHz value, rejecting anything that is not a multiple of 0.125.
    pub fn from_mhz(mhz: f64) -> Option<Self> {
        if !mhz.is_finite() || mhz < 0.0 {
            return None;
        }
        let eighths = (mhz * 8.0).round();
        if (eighths / 8.0 - mhz).abs() > 1e-9 || eighths > u32::MAX as f64 {
            return None;
        }
        Some(Self(eighths as u32))
    }

    pub const fn eighths(self) -> u32 {
        self.0
    }

    pub fn mhz(self) -> f64 {
        self.0 as f64 / 8.0
    }

    /// Integer MHz part.
    pub const fn whole_mhz(self) -> u32 {
        self.0 / 8
    }

    /// Fractional part in eighths (0..8).
    pub const fn frac_eighths(self) -> u32 {
        self.0 % 8
    }

    /// True when the value lies inside the clock tile's output envelope.
    pub fn is_in_envelope(self) -> bool {
        let mhz = self.mhz();
        (MIN_FREQUENCY_MHZ..=MAX_FREQUENCY_MHZ).contains(&mhz)
    }
}

impl fmt::Display for Frequency {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.mhz())
    }
}

/// Frequency, phase and voltage applied to the device at one instant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OperatingPoint {
    pub frequency: Frequency,
    /// Clock phase in degrees, `[0, 360)`.
    pub phase_deg: f64,
    pub voltage_v: f64,
}

impl OperatingPoint {
    pub fn new(frequency: Frequency, phase_deg: f64, voltage_v: f64) -> Self {
        Self {
            frequency,
            phase_deg,
            voltage_v,
        }
    }

    pub fn frequency_mhz(&self) -> f64 {
        self.frequency.mhz()
    }
}

/// Selects which components of the operating point are randomized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ControlEnables {
    pub f_en: bool,
    pub p_en: bool,
    pub v_en: bool,
}

impl ControlEnables {
    pub const NONE: Self = Self {
        f_en: false,
        p_en: false,
        v_en: false,
    };

    pub fn any(self) -> bool {
        self.f_en || self.p_en || self.v_en
    }
}

impl fmt::Display for ControlEnables {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.f_en {
            parts.push("f");
        }
        if self.p_en {
            parts.push("p");
        }
        if self.v_en {
            parts.push("v");
        }
        if parts.is_empty() {
            write!(f, "none")
        } else {
            write!(f, "{}", parts.join(","))
        }
    }
}

/// One piecewise-constant segment: `point` holds from `start_us` until the next segment.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment {
    pub start_us: f64,
    pub point: OperatingPoint,
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TimelineError {
    #[error("timeline is empty")]
    Empty,
    #[error("first segment starts at {0} us, expected 0")]
    NonZeroStart(f64),
    #[error("segment {index} starts at {start_us} us, not after the previous segment")]
    NotIncreasing { index: usize, start_us: f64 },
}

/// Operating-point schedule over wall-clock time.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatingTimeline {
    segments: Vec<Segment>,
    duration_us: f64,
}

impl OperatingTimeline {
    pub fn new(segments: Vec<Segment>, duration_us: f64) -> Result<Self, TimelineError> {
        let first = segments.first().ok_or(TimelineError::Empty)?;
        if first.start_us != 0.0 {
            return Err(TimelineError::NonZeroStart(first.start_us));
        }
        for (index, pair) in segments.windows(2).enumerate() {
            if pair[1].start_us <= pair[0].start_us {
                return Err(TimelineError::NotIncreasing {
                    index: index + 1,
                    start_us: pair[1].start_us,
                });
            }
        }
        Ok(Self {
            segments,
            duration_us,
        })
    }

    /// A single segment holding `point` for the whole duration.
    pub fn constant(point: OperatingPoint, duration_us: f64) -> Self {
        Self {
            segments: vec![Segment {
                start_us: 0.0,
                point,
            }],
            duration_us,
        }
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn duration_us(&self) -> f64 {
        self.duration_us
    }

    /// Index of the segment active at time `t_us`.
    pub fn segment_index_at(&self, t_us: f64) -> usize {
        match self
            .segments
            .binary_search_by(|s| s.start_us.partial_cmp(&t_us).unwrap())
        {
            Ok(i) => i,
            Err(0) => 0,
            Err(i) => i - 1,
        }
    }

    pub fn point_at(&self, t_us: f64) -> OperatingPoint {
        self.segments[self.segment_index_at(t_us)].point
    }

    /// End time of segment `index` (the next start, or the timeline duration).
    pub fn segment_end(&self, index: usize) -> f64 {
        self.segments
            .get(index + 1)
            .map_or(self.duration_us, |s| s.start_us)
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum TraceSetError {
    #[error("{plaintexts} plaintext rows for {traces} sample rows")]
    RowMismatch { plaintexts: usize, traces: usize },
}

/// A matrix of power samples with the plaintexts and key that produced them.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceSet {
    pub sample_rate_hz: f64,
    pub resolution_bits: u32,
    pub key: [u8; 16],
    pub plaintexts: Vec<[u8; 16]>,
    /// `n_traces x n_samples`, row-major.
    pub samples: Array2<f32>,
    pub chip_label: String,
}

impl TraceSet {
    pub fn new(
        key: [u8; 16],
        plaintexts: Vec<[u8; 16]>,
        samples: Array2<f32>,
        chip_label: impl Into<String>,
    ) -> Result<Self, TraceSetError> {
        if plaintexts.len() != samples.nrows() {
            return Err(TraceSetError::RowMismatch {
                plaintexts: plaintexts.len(),
                traces: samples.nrows(),
            });
        }
        Ok(Self {
            sample_rate_hz: SAMPLE_RATE_HZ,
            resolution_bits: RESOLUTION_BITS,
            key,
            plaintexts,
            samples,
            chip_label: chip_label.into(),
        })
    }

    pub fn n_traces(&self) -> usize {
        self.samples.nrows()
    }

    pub fn n_samples(&self) -> usize {
        self.samples.ncols()
    }

    pub fn validate(&self) -> Result<(), TraceSetError> {
        if self.plaintexts.len() != self.samples.nrows() {
            return Err(TraceSetError::RowMismatch {
                plaintexts: self.plaintexts.len(),
                traces: self.samples.nrows(),
            });
        }
        Ok(())
    }

    /// Same metadata, samples replaced (used by the post-processing stages).
    pub fn with_samples(&self, samples: Array2<f32>) -> Self {
        assert_eq!(samples.nrows(), self.n_traces());
        Self {
            sample_rate_hz: self.sample_rate_hz,
            resolution_bits: self.resolution_bits,
            key: self.key,
            plaintexts: self.plaintexts.clone(),
            samples,
            chip_label: self.chip_label.clone(),
        }
    }

    /// Keeps the first `n` traces.
    pub fn head(&self, n: usize) -> Self {
        let n = n.min(self.n_traces());
        Self {
            sample_rate_hz: self.sample_rate_hz,
            resolution_bits: self.resolution_bits,
            key: self.key,
            plaintexts: self.plaintexts[..n].to_vec(),
            samples: self.samples.slice(ndarray::s![..n, ..]).to_owned(),
            chip_label: self.chip_label.clone(),
        }
    }
}
