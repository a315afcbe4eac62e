//! Operating points chosen by the random actuator for one scenario run.
//!
//! cargo run --example operating_timeline -- F3 600

use desync_bench::leakage::SynthConfig;
use desync_bench::mmcm::ConfigTable;
use desync_bench::rdvfs::build_timeline;
use desync_bench::scenario::builtin;

fn main() -> desync_bench::Result<()> {
    let mut args = std::env::args().skip(1);
    let id = args.next().unwrap_or_else(|| "V3".into());
    let duration: f64 = args.next().map_or(600.0, |s| s.parse().expect("duration_us"));
    let scenario = builtin(&id).expect("unknown scenario id");
    let cfg = SynthConfig::default();
    let table = ConfigTable::from_frequencies(&scenario.frequency_values, cfg.f_in)?;

    let (timeline, wave) = build_timeline(&scenario, duration, 42, &table, &cfg.sim)?;
    println!("{id}: {} segments in {duration} us", timeline.segments().len());
    for seg in timeline.segments().iter().take(12) {
        println!(
            "  {:>7.2} us  {:>7.3} MHz  {:>6.2} deg  target {:.2} V (actual {:.3} V)",
            seg.start_us,
            seg.point.frequency_mhz(),
            seg.point.phase_deg,
            seg.point.voltage_v,
            wave.voltage_at(seg.start_us)
        );
    }
    Ok(())
}
