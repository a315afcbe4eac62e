//! Profile on one chip, attack another. Prints the guessing entropy per byte.

use desync_bench::attack::{build_templates, default_grid, template_attack, DEFAULT_POI_COUNT};
use desync_bench::leakage::{synthesize_profiling_set, synthesize_set, SynthConfig};
use desync_bench::runner::DEFAULT_KEY;
use desync_bench::scenario::builtin;

fn main() -> desync_bench::Result<()> {
    let scenario = builtin("C1").unwrap();
    let cfg = SynthConfig::default();
    let profiling_key = [0x11; 16];
    let prof = synthesize_profiling_set(50, profiling_key, &scenario, &cfg, 2)?;
    let attack = synthesize_set(2000, DEFAULT_KEY, &scenario, &cfg, 3)?;
    println!("profiling on {}, attacking {}", prof.chip_label, attack.chip_label);

    let grid = default_grid(1000);
    for b in 0..16 {
        let templates = build_templates(&prof, b, DEFAULT_POI_COUNT)?;
        let ge = template_attack(&templates, &attack, b, 10, &grid, 9)?;
        let curve: Vec<String> = ge.ge.iter().map(|g| format!("{g:.1}")).collect();
        println!("byte {b:>2}: POIs {:?}  GE {}", templates.pois, curve.join(" "));
    }
    Ok(())
}
