//! Synthetic power traces of a software AES-128 first round.
//!
//! The encryption runs `cycles_per_round` clock cycles after a fixed number of
//! delay cycles following the trigger edge. Each cycle draws a rectangular
//! power pulse of height `gain * v^2 * (f / f_ref) * (beta + alpha * L) + offset`
//! where `L` is the Hamming weight of an SBOX output on the cycle that handles
//! that byte and 0 elsewhere. Pulses are integrated on the sampling grid, then
//! Gaussian noise is added and the result is quantized.

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::mmcm::{default_input_clock, ConfigTable, MmcmError};
use crate::rdvfs::{build_timeline, SimConfig, SimError, VoltageWaveform};
use crate::scenario::ScenarioSpec;
use crate::trace::{Frequency, OperatingTimeline, TraceSet, TraceSetError, SAMPLE_RATE_HZ};

#[rustfmt::skip]
pub const SBOX: [u8; 256] = [
    0x63, 0x7c, 0x77, 0x7b, 0xf2, 0x6b, 0x6f, 0xc5, 0x30, 0x01, 0x67, 0x2b, 0xfe, 0xd7, 0xab, 0x76,
    0xca, 0x82, 0xc9, 0x7d, 0xfa, 0x59, 0x47, 0xf0, 0xad, 0xd4, 0xa2, 0xaf, 0x9c, 0xa4, 0x72, 0xc0,
    0xb7, 0xfd, 0x93, 0x26, 0x36, 0x3f, 0xf7, 0xcc, 0x34, 0xa5, 0xe5, 0xf1, 0x71, 0xd8, 0x31, 0x15,
    0x04, 0xc7, 0x23, 0xc3, 0x18, 0x96, 0x05, 0x9a, 0x07, 0x12, 0x80, 0xe2, 0xeb, 0x27, 0xb2, 0x75,
    0x09, 0x83, 0x2c, 0x1a, 0x1b, 0x6e, 0x5a, 0xa0, 0x52, 0x3b, 0xd6, 0xb3, 0x29, 0xe3, 0x2f, 0x84,
    0x53, 0xd1, 0x00, 0xed, 0x20, 0xfc, 0xb1, 0x5b, 0x6a, 0xcb, 0xbe, 0x39, 0x4a, 0x4c, 0x58, 0xcf,
    0xd0, 0xef, 0xaa, 0xfb, 0x43, 0x4d, 0x33, 0x85, 0x45, 0xf9, 0x02, 0x7f, 0x50, 0x3c, 0x9f, 0xa8,
    0x51, 0xa3, 0x40, 0x8f, 0x92, 0x9d, 0x38, 0xf5, 0xbc, 0xb6, 0xda, 0x21, 0x10, 0xff, 0xf3, 0xd2,
    0xcd, 0x0c, 0x13, 0xec, 0x5f, 0x97, 0x44, 0x17, 0xc4, 0xa7, 0x7e, 0x3d, 0x64, 0x5d, 0x19, 0x73,
    0x60, 0x81, 0x4f, 0xdc, 0x22, 0x2a, 0x90, 0x88, 0x46, 0xee, 0xb8, 0x14, 0xde, 0x5e, 0x0b, 0xdb,
    0xe0, 0x32, 0x3a, 0x0a, 0x49, 0x06, 0x24, 0x5c, 0xc2, 0xd3, 0xac, 0x62, 0x91, 0x95, 0xe4, 0x79,
    0xe7, 0xc8, 0x37, 0x6d, 0x8d, 0xd5, 0x4e, 0xa9, 0x6c, 0x56, 0xf4, 0xea, 0x65, 0x7a, 0xae, 0x08,
    0xba, 0x78, 0x25, 0x2e, 0x1c, 0xa6, 0xb4, 0xc6, 0xe8, 0xdd, 0x74, 0x1f, 0x4b, 0xbd, 0x8b, 0x8a,
    0x70, 0x3e, 0xb5, 0x66, 0x48, 0x03, 0xf6, 0x0e, 0x61, 0x35, 0x57, 0xb9, 0x86, 0xc1, 0x1d, 0x9e,
    0xe1, 0xf8, 0x98, 0x11, 0x69, 0xd9, 0x8e, 0x94, 0x9b, 0x1e, 0x87, 0xe9, 0xce, 0x55, 0x28, 0xdf,
    0x8c, 0xa1, 0x89, 0x0d, 0xbf, 0xe6, 0x42, 0x68, 0x41, 0x99, 0x2d, 0x0f, 0xb0, 0x54, 0xbb, 0x16,
];

pub fn sbox(x: u8) -> u8 {
    SBOX[x as usize]
}

pub fn hw(x: u8) -> u32 {
    x.count_ones()
}

/// Hamming weight of the first-round SBOX output for every byte.
pub fn first_round_leakage(pt: &[u8; 16], key: &[u8; 16]) -> [u32; 16] {
    std::array::from_fn(|i| hw(sbox(pt[i] ^ key[i])))
}

/// `(gain, offset)` perturbation of one physical device.
#[derive(Debug, Clone, PartialEq)]
pub struct ChipProfile {
    pub label: String,
    pub gain: f64,
    pub offset: f64,
}

impl ChipProfile {
    pub fn new(label: impl Into<String>, gain: f64, offset: f64) -> Self {
        assert!(gain > 0.0, "chip gain must be positive");
        Self {
            label: label.into(),
            gain,
            offset,
        }
    }

    pub fn artix7_100() -> Self {
        Self::new("artix7-100", 1.0, 0.0)
    }

    pub fn artix7_35() -> Self {
        Self::new("artix7-35", 0.93, 0.5)
    }

    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "artix7-100" => Some(Self::artix7_100()),
            "artix7-35" => Some(Self::artix7_35()),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeakageModel {
    /// Power units per Hamming-weight unit.
    pub alpha: f64,
    /// Data-independent switching power per cycle.
    pub beta: f64,
    pub noise_sigma: f64,
    pub cycles_per_round: u32,
    pub byte_cycle_offsets: [u32; 16],
    /// Delay between trigger and first AES cycle, counted at `f_ref_mhz`.
    pub trigger_delay_us: f64,
    /// ADC resolution; 0 disables quantization.
    pub quantize_bits: u32,
    /// ADC full-scale range in power units.
    pub full_scale: (f64, f64),
    pub f_ref_mhz: f64,
}

impl Default for LeakageModel {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 90.0,
            noise_sigma: 3.0,
            cycles_per_round: 64,
            byte_cycle_offsets: std::array::from_fn(|i| 4 * i as u32),
            trigger_delay_us: 4.0,
            quantize_bits: 12,
            full_scale: (0.0, 256.0),
            f_ref_mhz: 50.0,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum LeakageError {
    #[error("invalid leakage model: {0}")]
    InvalidModel(&'static str),
    #[error("timeline ends at {available_us} us but the trace needs {needed_us} us")]
    Coverage { needed_us: f64, available_us: f64 },
    #[error("need at least one trace")]
    NoTraces,
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Table(#[from] MmcmError),
    #[error(transparent)]
    Set(#[from] TraceSetError),
}

impl LeakageModel {
    pub fn validate(&self) -> Result<(), LeakageError> {
        if !(self.alpha > 0.0) {
            return Err(LeakageError::InvalidModel("alpha must be positive"));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(LeakageError::InvalidModel("noise sigma must be non-negative"));
        }
        if !self.byte_cycle_offsets.windows(2).all(|w| w[0] < w[1])
            || self.byte_cycle_offsets[15] >= self.cycles_per_round
        {
            return Err(LeakageError::InvalidModel(
                "byte offsets must increase and fit in the round",
            ));
        }
        if !(self.trigger_delay_us >= 0.0 && self.f_ref_mhz > 0.0) {
            return Err(LeakageError::InvalidModel("bad trigger delay or reference clock"));
        }
        if self.full_scale.1 <= self.full_scale.0 {
            return Err(LeakageError::InvalidModel("empty full-scale range"));
        }
        Ok(())
    }

    /// Trigger delay expressed in clock cycles.
    pub fn delay_cycles(&self) -> u32 {
        (self.trigger_delay_us * self.f_ref_mhz).round() as u32
    }

    /// Samples needed to cover the delay and the full round at `f_min`.
    pub fn window_samples(&self, f_min: Frequency, sample_rate_hz: f64) -> usize {
        let cycles = (self.delay_cycles() + self.cycles_per_round) as f64;
        (cycles / f_min.mhz() * sample_rate_hz / 1e6).ceil() as usize
    }

    /// Rounds to the ADC grid and clamps to full scale; returns power units.
    pub fn quantize(&self, x: f64) -> f64 {
        quantize(x, self.quantize_bits, self.full_scale)
    }
}

pub fn quantize(x: f64, bits: u32, full_scale: (f64, f64)) -> f64 {
    if bits == 0 {
        return x;
    }
    let levels = (1u64 << bits) as f64;
    let lsb = (full_scale.1 - full_scale.0) / levels;
    let code = ((x - full_scale.0) / lsb).round().clamp(0.0, levels - 1.0);
    full_scale.0 + code * lsb
}

/// Rising clock edges of a timeline, in microseconds.
///
/// The cycle count advances at the segment frequency; a phase change shifts
/// edges later by `phase / 360` of a cycle, starting at the segment boundary.
#[derive(Debug, Clone)]
pub struct ClockEdges<'a> {
    timeline: &'a OperatingTimeline,
    seg: usize,
    seg_cycles: f64,
    next_k: f64,
}

impl<'a> ClockEdges<'a> {
    /// Edges at or after `t_us`.
    pub fn starting_at(timeline: &'a OperatingTimeline, t_us: f64) -> Self {
        let seg = timeline.segment_index_at(t_us);
        let segments = timeline.segments();
        let mut seg_cycles = 0.0;
        for j in 0..seg {
            seg_cycles += segments[j].point.frequency_mhz()
                * (timeline.segment_end(j) - segments[j].start_us);
        }
        let mut edges = Self {
            timeline,
            seg,
            seg_cycles,
            next_k: 0.0,
        };
        edges.next_k = (edges.cycles_at(t_us) - 1e-9).ceil();
        edges
    }

    fn cycles_at(&self, t_us: f64) -> f64 {
        let s = &self.timeline.segments()[self.seg];
        self.seg_cycles + s.point.frequency_mhz() * (t_us - s.start_us) - s.point.phase_deg / 360.0
    }
}

impl Iterator for ClockEdges<'_> {
    type Item = f64;

    fn next(&mut self) -> Option<f64> {
        loop {
            let segments = self.timeline.segments();
            let s = &segments[self.seg];
            let f = s.point.frequency_mhz();
            let end = self.timeline.segment_end(self.seg);
            let t_edge =
                s.start_us + (self.next_k + s.point.phase_deg / 360.0 - self.seg_cycles) / f;
            if t_edge < end {
                self.next_k += 1.0;
                return Some(t_edge);
            }
            if self.seg + 1 >= segments.len() {
                return None;
            }
            self.seg_cycles += f * (end - s.start_us);
            self.seg += 1;
            // A forward phase jump across an integer count fires an edge at the boundary.
            let at_boundary = self.cycles_at(end);
            if at_boundary >= self.next_k {
                self.next_k = at_boundary.floor() + 1.0;
                return Some(end);
            }
        }
    }
}

/// Noise-free power integrated on the sample grid, before quantization.
///
/// The trigger fires on the first clock edge at or after `start_us`; sample 0
/// starts at that edge.
pub fn clean_trace(
    pt: &[u8; 16],
    key: &[u8; 16],
    timeline: &OperatingTimeline,
    waveform: &VoltageWaveform,
    model: &LeakageModel,
    chip: &ChipProfile,
    start_us: f64,
    n_samples: usize,
    sample_rate_hz: f64,
) -> Result<Vec<f64>, LeakageError> {
    let leaks = first_round_leakage(pt, key);
    let mut cycle_leak = vec![0.0; model.cycles_per_round as usize];
    for (i, &c) in model.byte_cycle_offsets.iter().enumerate() {
        cycle_leak[c as usize] = leaks[i] as f64;
    }
    let delay = model.delay_cycles() as usize;
    let ts_us = 1e6 / sample_rate_hz;

    let mut edges = ClockEdges::starting_at(timeline, start_us);
    let coverage = |needed_us: f64| LeakageError::Coverage {
        needed_us,
        available_us: timeline.duration_us(),
    };
    let t_trig = edges.next().ok_or_else(|| coverage(start_us))?;
    let window_end = n_samples as f64; // in samples
    let mut acc = vec![0.0; n_samples];
    let mut a_us = t_trig;
    let mut cycle = 0usize;
    loop {
        let a = (a_us - t_trig) / ts_us;
        if a >= window_end {
            break;
        }
        let b_us = edges
            .next()
            .ok_or_else(|| coverage(t_trig + window_end * ts_us))?;
        let b = (b_us - t_trig) / ts_us;
        let f_eff = 1.0 / (b_us - a_us);
        let v = waveform.voltage_at(0.5 * (a_us + b_us));
        let leak = cycle
            .checked_sub(delay)
            .and_then(|c| cycle_leak.get(c))
            .copied()
            .unwrap_or(0.0);
        let height = chip.gain * v * v * (f_eff / model.f_ref_mhz) * (model.beta + model.alpha * leak)
            + chip.offset;
        let first = a.floor().max(0.0) as usize;
        let last = (b.ceil() as usize).min(n_samples);
        for (s, slot) in acc.iter_mut().enumerate().take(last).skip(first) {
            let overlap = b.min(s as f64 + 1.0) - a.max(s as f64);
            if overlap > 0.0 {
                *slot += height * overlap;
            }
        }
        a_us = b_us;
        cycle += 1;
    }
    Ok(acc)
}

/// One noisy, quantized trace.
#[allow(clippy::too_many_arguments)]
pub fn synthesize_trace<R: Rng + ?Sized>(
    pt: &[u8; 16],
    key: &[u8; 16],
    timeline: &OperatingTimeline,
    waveform: &VoltageWaveform,
    model: &LeakageModel,
    chip: &ChipProfile,
    start_us: f64,
    n_samples: usize,
    rng: &mut R,
) -> Result<Vec<f32>, LeakageError> {
    let clean = clean_trace(
        pt,
        key,
        timeline,
        waveform,
        model,
        chip,
        start_us,
        n_samples,
        SAMPLE_RATE_HZ,
    )?;
    Ok(clean
        .into_iter()
        .map(|x| {
            let z: f64 = StandardNormal.sample(rng);
            model.quantize(x + model.noise_sigma * z) as f32
        })
        .collect())
}

/// Everything needed to turn a scenario into traces.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub model: LeakageModel,
    pub sim: SimConfig,
    /// Earliest trigger time; lets the regulator leave its initial state.
    pub warmup_us: f64,
    /// Overrides the window length derived from the slowest scenario clock.
    pub n_samples: Option<usize>,
    pub f_in: Frequency,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            model: LeakageModel::default(),
            sim: SimConfig::default(),
            warmup_us: 150.0,
            n_samples: None,
            f_in: default_input_clock(),
        }
    }
}

impl SynthConfig {
    pub fn n_samples_for(&self, scenario: &ScenarioSpec) -> usize {
        self.n_samples.unwrap_or_else(|| {
            self.model
                .window_samples(scenario.min_frequency(), SAMPLE_RATE_HZ)
        })
    }

    /// Interval over which the trigger time is spread, one actuation period.
    pub fn trigger_spread_us(&self, scenario: &ScenarioSpec) -> f64 {
        let en = scenario.enables;
        let mut spread = self.sim.lock_time_us;
        if en.v_en {
            spread = spread.max(self.sim.voltage_period_us);
        }
        spread
    }
}

fn trace_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Synthesizes one trace per plaintext, each under a fresh actuator timeline.
pub fn synthesize_for_plaintexts(
    plaintexts: Vec<[u8; 16]>,
    key: [u8; 16],
    scenario: &ScenarioSpec,
    chip: &ChipProfile,
    config: &SynthConfig,
    seed: u64,
) -> Result<TraceSet, LeakageError> {
    config.model.validate()?;
    if plaintexts.is_empty() {
        return Err(LeakageError::NoTraces);
    }
    let table = ConfigTable::from_frequencies(&scenario.frequency_values, config.f_in)?;
    let n_samples = config.n_samples_for(scenario);
    let spread = config.trigger_spread_us(scenario);
    let window_us = n_samples as f64 * 1e6 / SAMPLE_RATE_HZ
        + 1.0 / scenario.min_frequency().mhz()
        + 1.0;
    let mut samples = Array2::<f32>::zeros((plaintexts.len(), n_samples));
    for (t, (pt, mut row)) in plaintexts.iter().zip(samples.rows_mut()).enumerate() {
        let mut rng = trace_rng(seed, t as u64 + 1);
        let timeline_seed: u64 = rng.random();
        let start_us = config.warmup_us + spread * rng.random::<f64>();
        let (timeline, waveform) = build_timeline(
            scenario,
            start_us + window_us,
            timeline_seed,
            &table,
            &config.sim,
        )?;
        let trace = synthesize_trace(
            pt,
            &key,
            &timeline,
            &waveform,
            &config.model,
            chip,
            start_us,
            n_samples,
            &mut rng,
        )?;
        row.assign(&ndarray::ArrayView1::from(&trace));
    }
    Ok(TraceSet::new(key, plaintexts, samples, chip.label.clone())?)
}

/// Attack-style set on `chip`: uniformly random plaintexts.
pub fn synthesize_set_on(
    n_traces: usize,
    key: [u8; 16],
    scenario: &ScenarioSpec,
    chip: &ChipProfile,
    config: &SynthConfig,
    seed: u64,
) -> Result<TraceSet, LeakageError> {
    let mut rng = trace_rng(seed, 0);
    let plaintexts = (0..n_traces).map(|_| rng.random()).collect();
    synthesize_for_plaintexts(plaintexts, key, scenario, chip, config, seed)
}

/// Attack set on the scenario's attack chip.
pub fn synthesize_set(
    n_traces: usize,
    key: [u8; 16],
    scenario: &ScenarioSpec,
    config: &SynthConfig,
    seed: u64,
) -> Result<TraceSet, LeakageError> {
    synthesize_set_on(n_traces, key, scenario, &scenario.chip_attack, config, seed)
}

/// Profiling set on the scenario's training chip. For every byte position the
/// SBOX input `pt ^ key` takes each of the 256 values exactly `per_class` times.
pub fn synthesize_profiling_set(
    per_class: usize,
    key: [u8; 16],
    scenario: &ScenarioSpec,
    config: &SynthConfig,
    seed: u64,
) -> Result<TraceSet, LeakageError> {
    let n = 256 * per_class;
    let mut rng = trace_rng(seed, 0);
    let mut plaintexts = vec![[0u8; 16]; n];
    let mut classes: Vec<u8> = (0..n).map(|i| (i % 256) as u8).collect();
    for b in 0..16 {
        classes.shuffle(&mut rng);
        for (pt, &c) in plaintexts.iter_mut().zip(&classes) {
            pt[b] = c ^ key[b];
        }
    }
    synthesize_for_plaintexts(plaintexts, key, scenario, &scenario.chip_train, config, seed)
}
