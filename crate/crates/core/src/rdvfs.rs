//! Discrete-event model of the random DVFS actuator.
//!
//! Three parts cooperate in [`build_timeline`]:
//!
//! * [`RopGen`] draws random operating points from the scenario memories,
//! * [`DfsState`] reconfigures the idle clock tile of a master/slave pair and
//!   swaps roles once the slave locks, so the output clock is never gated,
//! * [`RegulatorState`] follows voltage targets with first-order settling.
//!
//! A new frequency/phase request is issued as soon as the previous one has
//! locked; voltage requests are issued once the regulator has settled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::mmcm::{ConfigTable, MmcmConfig, MmcmError};
use crate::scenario::ScenarioSpec;
use crate::trace::{ControlEnables, Frequency, OperatingPoint, OperatingTimeline, Segment};

/// Knobs of the actuator model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    /// Time from slave reconfiguration to its locked flag.
    pub lock_time_us: f64,
    /// Regulator settling time constant.
    pub tau_us: f64,
    /// Interval between voltage requests.
    pub voltage_period_us: f64,
    /// Smallest phase shift one actuation can apply.
    pub native_phase_step_deg: f64,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            lock_time_us: 20.0,
            tau_us: 50.0,
            // Three time constants: within 5% of the target before the next request.
            voltage_period_us: 150.0,
            native_phase_step_deg: 3.75,
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SimError {
    #[error("frequency request rejected: {0}")]
    Table(#[from] MmcmError),
    #[error("duration must be positive, got {0} us")]
    BadDuration(f64),
    #[error("glitch: selected clock tile is not locked at t = {0} us")]
    ClockGated(f64),
}

/// Random operating point generator.
#[derive(Debug, Clone)]
pub struct RopGen {
    rng: ChaCha8Rng,
    freq_memory: Vec<Frequency>,
    phase_memory: Vec<f64>,
    volt_memory: Vec<f64>,
    current: OperatingPoint,
}

impl RopGen {
    pub fn new(scenario: &ScenarioSpec, seed: u64) -> Self {
        Self::with_rng(scenario, ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn with_rng(scenario: &ScenarioSpec, rng: ChaCha8Rng) -> Self {
        Self {
            rng,
            freq_memory: scenario.frequency_values.clone(),
            phase_memory: scenario.phase_values.clone(),
            volt_memory: scenario.voltage_values.clone(),
            current: scenario.default_point(),
        }
    }

    pub fn current(&self) -> OperatingPoint {
        self.current
    }

    /// Redraws every enabled component uniformly from its memory. Disabled
    /// components keep their value and consume no randomness.
    pub fn next_point(&mut self, enables: ControlEnables) -> OperatingPoint {
        if enables.f_en {
            let i = self.rng.random_range(0..self.freq_memory.len());
            self.current.frequency = self.freq_memory[i];
        }
        if enables.p_en {
            let i = self.rng.random_range(0..self.phase_memory.len());
            self.current.phase_deg = self.phase_memory[i];
        }
        if enables.v_en {
            let i = self.rng.random_range(0..self.volt_memory.len());
            self.current.voltage_v = self.volt_memory[i];
        }
        self.current
    }

    /// Raw generator state, for checking that disabled draws leave it untouched.
    pub fn rng(&self) -> &ChaCha8Rng {
        &self.rng
    }
}

/// Free-function form of [`RopGen::next_point`].
pub fn ropgen_next(state: &mut RopGen, enables: ControlEnables) -> OperatingPoint {
    state.next_point(enables)
}

/// Splits a phase shift into native-step actuations; the last one carries the remainder.
pub fn phase_shift_sequence(target_deg: f64, native_step_deg: f64) -> Vec<f64> {
    assert!(target_deg >= 0.0 && native_step_deg > 0.0);
    let count = (target_deg / native_step_deg - 1e-9).ceil().max(0.0) as usize;
    let mut steps = vec![native_step_deg; count];
    if let Some(last) = steps.last_mut() {
        *last = target_deg - native_step_deg * (count - 1) as f64;
    }
    steps
}

/// One of the two clock tiles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClockTile {
    pub config: MmcmConfig,
    pub frequency: Frequency,
    pub phase_deg: f64,
    pub locked: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PendingReconfig {
    pub frequency: Frequency,
    pub phase_deg: f64,
    /// Signed fine phase actuations applied to the slave while it relocks.
    pub phase_steps: Vec<f64>,
    /// Nothing was enabled: completes on the next tick without a swap.
    pub noop: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum DfsEvent {
    /// The slave locked and now drives the output; `at_us` is the offset inside the tick.
    Swap {
        at_us: f64,
        frequency: Frequency,
        phase_deg: f64,
    },
    /// A request with both enables clear finished.
    NoOpComplete { at_us: f64 },
}

/// Master/slave frequency actuator.
#[derive(Debug, Clone, PartialEq)]
pub struct DfsState {
    tile_a: ClockTile,
    tile_b: ClockTile,
    sel_b: bool,
    ack: bool,
    lock_remaining_us: f64,
    pending: Option<PendingReconfig>,
    lock_time_us: f64,
    native_phase_step_deg: f64,
}

impl DfsState {
    /// Both tiles start locked on `frequency`/`phase_deg`; tile A drives the output.
    pub fn new(
        frequency: Frequency,
        phase_deg: f64,
        table: &ConfigTable,
        config: &SimConfig,
    ) -> Result<Self, SimError> {
        let tile = ClockTile {
            config: table.lookup(frequency)?,
            frequency,
            phase_deg,
            locked: true,
        };
        Ok(Self {
            tile_a: tile,
            tile_b: tile,
            sel_b: false,
            ack: false,
            lock_remaining_us: 0.0,
            pending: None,
            lock_time_us: config.lock_time_us,
            native_phase_step_deg: config.native_phase_step_deg,
        })
    }

    pub fn sel_b(&self) -> bool {
        self.sel_b
    }

    pub fn ack(&self) -> bool {
        self.ack
    }

    pub fn lock_remaining_us(&self) -> f64 {
        self.lock_remaining_us
    }

    pub fn pending(&self) -> Option<&PendingReconfig> {
        self.pending.as_ref()
    }

    /// Tile currently driving the output.
    pub fn master(&self) -> &ClockTile {
        if self.sel_b {
            &self.tile_b
        } else {
            &self.tile_a
        }
    }

    pub fn slave(&self) -> &ClockTile {
        if self.sel_b {
            &self.tile_a
        } else {
            &self.tile_b
        }
    }

    fn slave_mut(&mut self) -> &mut ClockTile {
        if self.sel_b {
            &mut self.tile_a
        } else {
            &mut self.tile_b
        }
    }

    pub fn output_locked(&self) -> bool {
        self.master().locked
    }

    /// Starts reconfiguring the slave. Returns `Ok(false)` without touching the
    /// state while a previous reconfiguration is in flight.
    pub fn request(
        &mut self,
        frequency: Frequency,
        phase_deg: f64,
        f_en: bool,
        p_en: bool,
        table: &ConfigTable,
    ) -> Result<bool, SimError> {
        if self.ack {
            return Ok(false);
        }
        let master = *self.master();
        let (target_f, config) = if f_en {
            (frequency, table.lookup(frequency)?)
        } else {
            (master.frequency, master.config)
        };
        let target_p = if p_en { phase_deg } else { master.phase_deg };
        let noop = !f_en && !p_en;
        let delta = target_p - master.phase_deg;
        let phase_steps = phase_shift_sequence(delta.abs(), self.native_phase_step_deg)
            .into_iter()
            .map(|s| s.copysign(delta))
            .collect();

        self.ack = true;
        self.pending = Some(PendingReconfig {
            frequency: target_f,
            phase_deg: target_p,
            phase_steps,
            noop,
        });
        if noop {
            self.lock_remaining_us = 0.0;
        } else {
            self.lock_remaining_us = self.lock_time_us;
            let slave = self.slave_mut();
            slave.config = config;
            slave.frequency = target_f;
            slave.phase_deg = target_p;
            slave.locked = false;
        }
        Ok(true)
    }

    /// Advances time by `dt_us`.
    pub fn tick(&mut self, dt_us: f64) -> Vec<DfsEvent> {
        assert!(dt_us > 0.0, "tick needs a positive step");
        let mut events = Vec::new();
        let Some(pending) = &self.pending else {
            return events;
        };
        if pending.noop {
            events.push(DfsEvent::NoOpComplete { at_us: 0.0 });
            self.pending = None;
            self.ack = false;
        } else if self.lock_remaining_us <= dt_us {
            let at_us = self.lock_remaining_us;
            let (frequency, phase_deg) = (pending.frequency, pending.phase_deg);
            self.slave_mut().locked = true;
            self.sel_b = !self.sel_b;
            self.ack = false;
            self.pending = None;
            self.lock_remaining_us = 0.0;
            events.push(DfsEvent::Swap {
                at_us,
                frequency,
                phase_deg,
            });
        } else {
            self.lock_remaining_us -= dt_us;
        }
        debug_assert!(self.output_locked());
        events
    }
}

/// Free-function forms matching the actuator protocol.
pub fn dfs_request(
    state: &mut DfsState,
    frequency: Frequency,
    phase_deg: f64,
    f_en: bool,
    p_en: bool,
    table: &ConfigTable,
) -> Result<bool, SimError> {
    state.request(frequency, phase_deg, f_en, p_en, table)
}

pub fn dfs_tick(state: &mut DfsState, dt_us: f64) -> Vec<DfsEvent> {
    state.tick(dt_us)
}

/// First-order regulator: `v` relaxes toward `v_target` with time constant `tau_us`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegulatorState {
    pub v_now: f64,
    pub v_target: f64,
    pub tau_us: f64,
}

impl RegulatorState {
    pub fn new(v: f64, tau_us: f64) -> Self {
        Self {
            v_now: v,
            v_target: v,
            tau_us,
        }
    }

    pub fn advance(&mut self, dt_us: f64) {
        self.v_now = self.v_target + (self.v_now - self.v_target) * (-dt_us / self.tau_us).exp();
    }
}

/// Piecewise-exponential regulator output, evaluable at any instant.
#[derive(Debug, Clone, PartialEq)]
pub struct VoltageWaveform {
    v_initial: f64,
    tau_us: f64,
    /// `(time, target, voltage at that time)`, times strictly increasing.
    actuations: Vec<(f64, f64, f64)>,
}

impl VoltageWaveform {
    pub fn new(v_initial: f64, tau_us: f64) -> Self {
        Self {
            v_initial,
            tau_us,
            actuations: Vec::new(),
        }
    }

    /// Records a target change at `t_us`, which must follow the previous one.
    pub fn actuate(&mut self, t_us: f64, target_v: f64) {
        if let Some(&(last, _, _)) = self.actuations.last() {
            assert!(t_us > last, "actuation times must increase");
        }
        let v_start = self.voltage_at(t_us);
        self.actuations.push((t_us, target_v, v_start));
    }

    pub fn actuations(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.actuations.iter().map(|&(t, v, _)| (t, v))
    }

    pub fn voltage_at(&self, t_us: f64) -> f64 {
        let idx = self.actuations.partition_point(|&(t, _, _)| t <= t_us);
        if idx == 0 {
            return self.v_initial;
        }
        let (t0, target, v_start) = self.actuations[idx - 1];
        target + (v_start - target) * (-(t_us - t0) / self.tau_us).exp()
    }

    /// Samples `[0, duration_us)` at `sample_rate_hz`.
    pub fn sample(&self, sample_rate_hz: f64, duration_us: f64) -> Vec<f64> {
        let dt_us = 1e6 / sample_rate_hz;
        let n = (duration_us / dt_us).ceil() as usize;
        (0..n).map(|i| self.voltage_at(i as f64 * dt_us)).collect()
    }
}

/// Regulator output for a list of `(time_us, target_v)` actuations starting from `v_initial`.
pub fn regulator_response(
    v_initial: f64,
    actuations: &[(f64, f64)],
    tau_us: f64,
    sample_rate_hz: f64,
    duration_us: f64,
) -> Vec<f64> {
    let mut wave = VoltageWaveform::new(v_initial, tau_us);
    for &(t, v) in actuations {
        wave.actuate(t, v);
    }
    wave.sample(sample_rate_hz, duration_us)
}

fn push_segment(segments: &mut Vec<Segment>, start_us: f64, point: OperatingPoint) {
    match segments.last_mut() {
        Some(last) if last.start_us == start_us => last.point = point,
        _ => segments.push(Segment { start_us, point }),
    }
}

/// Runs the closed actuation loop for `duration_us` and returns the digital
/// operating-point schedule together with the analog regulator output.
pub fn build_timeline(
    scenario: &ScenarioSpec,
    duration_us: f64,
    seed: u64,
    table: &ConfigTable,
    config: &SimConfig,
) -> Result<(OperatingTimeline, VoltageWaveform), SimError> {
    if !(duration_us > 0.0) {
        return Err(SimError::BadDuration(duration_us));
    }
    let en = scenario.enables;
    let dfs_en = ControlEnables {
        v_en: false,
        ..en
    };
    let volt_en = ControlEnables {
        v_en: en.v_en,
        ..ControlEnables::NONE
    };
    let mut rop = RopGen::new(scenario, seed);
    let mut point = rop.next_point(en);
    let mut dfs = DfsState::new(point.frequency, point.phase_deg, table, config)?;
    let mut regulator = RegulatorState::new(point.voltage_v, config.tau_us);
    let mut wave = VoltageWaveform::new(point.voltage_v, config.tau_us);
    let mut segments = vec![Segment {
        start_us: 0.0,
        point,
    }];

    let dfs_active = en.f_en || en.p_en;
    let request_next = |rop: &mut RopGen, dfs: &mut DfsState| -> Result<(), SimError> {
        let next = rop.next_point(dfs_en);
        dfs.request(next.frequency, next.phase_deg, en.f_en, en.p_en, table)?;
        Ok(())
    };
    if dfs_active {
        request_next(&mut rop, &mut dfs)?;
    }
    let mut next_volt = if en.v_en {
        config.voltage_period_us
    } else {
        f64::INFINITY
    };

    let mut t = 0.0;
    loop {
        let next_swap = if dfs.ack() {
            t + dfs.lock_remaining_us()
        } else {
            f64::INFINITY
        };
        let t_next = next_swap.min(next_volt);
        if t_next >= duration_us {
            break;
        }
        let dt = t_next - t;
        regulator.advance(dt);
        if dt > 0.0 && dfs_active {
            for event in dfs.tick(dt) {
                if let DfsEvent::Swap {
                    frequency,
                    phase_deg,
                    ..
                } = event
                {
                    point.frequency = frequency;
                    point.phase_deg = phase_deg;
                    push_segment(&mut segments, t_next, point);
                }
            }
        }
        t = t_next;
        if !dfs.output_locked() {
            return Err(SimError::ClockGated(t));
        }
        if dfs_active && !dfs.ack() {
            request_next(&mut rop, &mut dfs)?;
        }
        if t >= next_volt {
            let v = rop.next_point(volt_en).voltage_v;
            regulator.v_target = v;
            wave.actuate(t, v);
            point.voltage_v = v;
            push_segment(&mut segments, t, point);
            next_volt += config.voltage_period_us;
        }
    }
    let timeline = OperatingTimeline::new(segments, duration_us)
        .expect("segments are generated in increasing time order");
    Ok((timeline, wave))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mmcm::{build_config_table, default_input_clock};
    use crate::scenario::{builtin, parse_scenario};

    fn f(mhz: f64) -> Frequency {
        Frequency::from_mhz(mhz).unwrap()
    }

    fn table_25_75() -> ConfigTable {
        build_config_table(25.0, 75.0, 0.125, default_input_clock()).unwrap()
    }

    fn idle_state(table: &ConfigTable) -> DfsState {
        DfsState::new(f(50.0), 0.0, table, &SimConfig::default()).unwrap()
    }

    #[test]
    fn ropgen_disabled_is_identity() {
        let s = builtin("V3").unwrap();
        let mut rop = RopGen::new(&s, 7);
        let before = rop.clone();
        let p = rop.next_point(ControlEnables::NONE);
        assert_eq!(p, before.current());
        assert_eq!(rop.rng(), before.rng());
    }

    #[test]
    fn ropgen_voltage_draws_from_memory() {
        let s = builtin("V3").unwrap();
        let mut rop = RopGen::new(&s, 1);
        let en = ControlEnables {
            v_en: true,
            ..ControlEnables::NONE
        };
        for _ in 0..200 {
            let p = rop.next_point(en);
            assert!(s.voltage_values.contains(&p.voltage_v));
            assert_eq!(p.frequency, f(50.0));
        }
    }

    #[test]
    fn phase_sequences() {
        assert!(phase_shift_sequence(0.0, 3.75).is_empty());
        assert_eq!(phase_shift_sequence(30.0, 3.75), vec![3.75; 8]);
        assert_eq!(phase_shift_sequence(10.0, 3.75), vec![3.75, 3.75, 2.5]);
        let s = phase_shift_sequence(26.25, 3.75);
        assert_eq!(s.len(), 7);
        assert!((s.iter().sum::<f64>() - 26.25).abs() < 1e-12);
    }

    #[test]
    fn request_loads_slave_from_table() {
        let table = table_25_75();
        let mut dfs = idle_state(&table);
        assert!(dfs.request(f(50.5), 0.0, true, false, &table).unwrap());
        assert!(dfs.ack());
        assert_eq!(dfs.slave().config, table.lookup(f(50.5)).unwrap());
        assert!(!dfs.slave().locked);
        assert!(dfs.output_locked());
    }

    #[test]
    fn busy_request_is_rejected_without_mutation() {
        let table = table_25_75();
        let mut dfs = idle_state(&table);
        dfs.request(f(60.0), 0.0, true, false, &table).unwrap();
        let snapshot = dfs.clone();
        assert!(!dfs.request(f(30.0), 15.0, true, true, &table).unwrap());
        assert_eq!(dfs, snapshot);
    }

    #[test]
    fn unknown_frequency_is_an_error_not_a_rejection() {
        let table = table_25_75();
        let mut dfs = idle_state(&table);
        let err = dfs.request(f(80.0), 0.0, true, false, &table).unwrap_err();
        assert_eq!(err, SimError::Table(MmcmError::NotFound(80.0)));
        assert!(!dfs.ack());
    }

    #[test]
    fn noop_request_completes_next_tick() {
        let table = table_25_75();
        let mut dfs = idle_state(&table);
        assert!(dfs.request(f(60.0), 10.0, false, false, &table).unwrap());
        assert_eq!(dfs.tick(1.0), vec![DfsEvent::NoOpComplete { at_us: 0.0 }]);
        assert!(!dfs.ack());
        assert!(!dfs.sel_b());
    }

    #[test]
    fn idle_tick_emits_nothing() {
        let table = table_25_75();
        let mut dfs = idle_state(&table);
        assert!(dfs.tick(123.0).is_empty());
    }

    #[test]
    fn swap_at_lock_completion() {
        let table = table_25_75();
        let mut dfs = idle_state(&table);
        dfs.request(f(40.0), 0.0, true, false, &table).unwrap();
        assert!(dfs.tick(25.0 - 20.0).is_empty()); // 15 us left
        dfs.request(f(70.0), 0.0, true, false, &table).unwrap(); // rejected, busy
        let events = dfs.tick(25.0);
        assert_eq!(
            events,
            vec![DfsEvent::Swap {
                at_us: 15.0,
                frequency: f(40.0),
                phase_deg: 0.0
            }]
        );
        assert!(dfs.sel_b());
        assert_eq!(dfs.master().frequency, f(40.0));
        assert!(!dfs.ack());
    }

    #[test]
    fn two_close_requests_give_one_swap() {
        let table = table_25_75();
        let mut dfs = idle_state(&table);
        let mut swaps = 0;
        assert!(dfs.request(f(30.0), 0.0, true, false, &table).unwrap());
        swaps += dfs.tick(5.0).len();
        assert!(!dfs.request(f(31.0), 0.0, true, false, &table).unwrap());
        swaps += dfs.tick(30.0).len();
        assert_eq!(swaps, 1);
        assert_eq!(dfs.master().frequency, f(30.0));
    }

    #[test]
    fn regulator_closed_form() {
        let v = regulator_response(0.75, &[(0.0, 1.05)], 50.0, 1e6, 100.0);
        let expect = 1.05 - 0.30 * (-1.0f64).exp();
        assert!((v[50] - expect).abs() < 1e-12);
        assert!((v[50] - 0.9396).abs() < 1e-4);
        let flat = regulator_response(1.0, &[], 50.0, 1e6, 10.0);
        assert!(flat.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn regulator_state_matches_waveform() {
        let mut reg = RegulatorState::new(0.8, 50.0);
        reg.v_target = 1.0;
        let mut prev = reg.v_now;
        for _ in 0..10 {
            reg.advance(7.0);
            assert!(reg.v_now > prev && reg.v_now < 1.0);
            prev = reg.v_now;
        }
        let mut wave = VoltageWaveform::new(0.8, 50.0);
        wave.actuate(0.0, 1.0);
        assert!((wave.voltage_at(70.0) - reg.v_now).abs() < 1e-12);
    }

    #[test]
    fn synch_timeline_is_one_segment() {
        let s = builtin("Synch").unwrap();
        let table = ConfigTable::from_frequencies(&s.frequency_values, default_input_clock())
            .unwrap();
        let (tl, wave) = build_timeline(&s, 5000.0, 3, &table, &SimConfig::default()).unwrap();
        assert_eq!(tl.segments().len(), 1);
        assert_eq!(wave.actuations().count(), 0);
    }

    #[test]
    fn f3_timeline_segment_count() {
        let s = builtin("F3").unwrap();
        let table = ConfigTable::from_frequencies(&s.frequency_values, default_input_clock())
            .unwrap();
        let (tl, _) = build_timeline(&s, 2000.0, 11, &table, &SimConfig::default()).unwrap();
        let n = tl.segments().len();
        assert!((90..=110).contains(&n), "{n} segments");
        for seg in tl.segments() {
            assert!(s.frequency_values.contains(&seg.point.frequency));
        }
    }

    #[test]
    fn timeline_is_deterministic() {
        let s = builtin("V3").unwrap();
        let table = ConfigTable::from_frequencies(&s.frequency_values, default_input_clock())
            .unwrap();
        let a = build_timeline(&s, 3000.0, 99, &table, &SimConfig::default()).unwrap();
        let b = build_timeline(&s, 3000.0, 99, &table, &SimConfig::default()).unwrap();
        assert_eq!(a, b);
        let c = build_timeline(&s, 3000.0, 100, &table, &SimConfig::default()).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn combined_scenario_voltages_within_memory() {
        let s = parse_scenario(
            "id = mix\nvoltage = [0.8;1.0] step 0.05\nfrequency = {30, 40}\nphase = {0, 7.5}\nenables = f,p,v\n",
        )
        .unwrap();
        let table = ConfigTable::from_frequencies(&s.frequency_values, default_input_clock())
            .unwrap();
        let (tl, wave) = build_timeline(&s, 4000.0, 5, &table, &SimConfig::default()).unwrap();
        for seg in tl.segments() {
            assert!(s.frequency_values.contains(&seg.point.frequency));
            assert!(s.phase_values.contains(&seg.point.phase_deg));
            assert!(s.voltage_values.contains(&seg.point.voltage_v));
        }
        for v in wave.sample(1e6, 4000.0) {
            assert!((0.8 - 1e-12..=1.0 + 1e-12).contains(&v));
        }
    }

    #[test]
    fn bad_duration() {
        let s = builtin("Synch").unwrap();
        let table = ConfigTable::from_frequencies(&s.frequency_values, default_input_clock())
            .unwrap();
        assert_eq!(
            build_timeline(&s, 0.0, 1, &table, &SimConfig::default()),
            Err(SimError::BadDuration(0.0))
        );
    }
}
