//! Synthesize a small trace set for the synchronous scenario and look at one trace.
//!
//! cargo run --release --example synthesize_traces -- [n_traces] [sigma]

use desync_bench::leakage::{synthesize_set, SynthConfig};
use desync_bench::runner::DEFAULT_KEY;
use desync_bench::scenario::builtin;

fn main() -> desync_bench::Result<()> {
    let mut args = std::env::args().skip(1);
    let n: usize = args.next().map_or(500, |s| s.parse().expect("n_traces"));
    let mut cfg = SynthConfig::default();
    if let Some(s) = args.next() {
        cfg.model.noise_sigma = s.parse().expect("sigma");
    }

    let scenario = builtin("Synch").unwrap();
    let set = synthesize_set(n, DEFAULT_KEY, &scenario, &cfg, 7)?;
    println!(
        "{} traces x {} samples at {} MS/s, chip {}",
        set.n_traces(),
        set.n_samples(),
        set.sample_rate_hz / 1e6,
        set.chip_label
    );

    // First leak pulse: trigger delay in cycles, 5 samples per cycle at 50 MHz.
    let first = cfg.model.delay_cycles() as usize * 5;
    let row = set.samples.row(0);
    let view: Vec<String> = row
        .iter()
        .skip(first.saturating_sub(5))
        .take(25)
        .map(|v| format!("{v:.1}"))
        .collect();
    println!("trace 0 around sample {first}: {}", view.join(" "));
    Ok(())
}
