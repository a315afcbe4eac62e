//! Divider settings for a few output frequencies, then a configuration table.
//!
//! cargo run --example mmcm_solver -- 38.375 99.875 200

use desync_bench::mmcm::{build_config_table, default_input_clock, mmcm_output_frequency, solve_mmcm};
use desync_bench::Frequency;

fn main() -> desync_bench::Result<()> {
    let f_in = default_input_clock();
    let mut targets: Vec<f64> = std::env::args().skip(1).map(|s| s.parse().expect("MHz")).collect();
    if targets.is_empty() {
        targets = vec![25.0, 38.375, 50.0, 99.875, 333.125];
    }
    for mhz in targets {
        let Some(f) = Frequency::from_mhz(mhz) else {
            println!("{mhz:>9} MHz: not on the 0.125 MHz grid");
            continue;
        };
        match solve_mmcm(f, f_in) {
            Ok(c) => println!(
                "{mhz:>9} MHz: M={} D={} O={} vco={:.3} -> {:.4} MHz",
                c.m(),
                c.d(),
                c.o_eighths() as f64 / 8.0,
                c.vco_mhz(f_in.mhz()),
                mmcm_output_frequency(&c, f_in.mhz())
            ),
            Err(e) => println!("{mhz:>9} MHz: {e}"),
        }
    }

    let table = build_config_table(38.375, 39.5, 0.125, f_in)?;
    println!("\n{} lines", table.len());
    print!("{}", table.to_csv());
    Ok(())
}
