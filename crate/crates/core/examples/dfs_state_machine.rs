//! Drive the master/slave frequency actuator by hand.

use desync_bench::mmcm::{default_input_clock, ConfigTable};
use desync_bench::rdvfs::{DfsState, SimConfig};
use desync_bench::Frequency;

fn main() -> desync_bench::Result<()> {
    let freqs: Vec<Frequency> = [25.0, 50.0, 75.0].iter().map(|&f| Frequency::from_mhz(f).unwrap()).collect();
    let table = ConfigTable::from_frequencies(&freqs, default_input_clock())?;
    let sim = SimConfig::default();
    let mut dfs = DfsState::new(freqs[1], 0.0, &table, &sim)?;

    let show = |t: f64, d: &DfsState| {
        println!(
            "t={t:>5.1} us  out={:>5} MHz @ {:>5.2} deg  sel_b={} ack={} lock_left={:.1}",
            d.master().frequency.mhz(),
            d.master().phase_deg,
            d.sel_b(),
            d.ack(),
            d.lock_remaining_us()
        )
    };

    let mut t = 0.0;
    show(t, &dfs);
    println!("request 75 MHz, 90 deg: accepted={}", dfs.request(freqs[2], 90.0, true, true, &table)?);
    println!("request 25 MHz while busy: accepted={}", dfs.request(freqs[0], 0.0, true, false, &table)?);
    while dfs.ack() {
        for ev in dfs.tick(5.0) {
            println!("  event {ev:?}");
        }
        t += 5.0;
        show(t, &dfs);
    }
    Ok(())
}
