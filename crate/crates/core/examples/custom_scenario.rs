//! Scenarios are plain text. This one mixes frequency and phase scaling.

use desync_bench::attack::{mean_rho, traces_to_disclosure, default_grid};
use desync_bench::leakage::{synthesize_set, SynthConfig};
use desync_bench::parse_scenario;
use desync_bench::runner::DEFAULT_KEY;

const SCENARIO: &str = "
id = FP
voltage = 1
frequency = [45;55] step 2.5
phase = [0;90] step 22.5
chip_train = artix7-100
chip_attack = artix7-100
enables = f,p
";

fn main() -> desync_bench::Result<()> {
    let scenario = parse_scenario(SCENARIO)?;
    println!(
        "{}: {} frequencies, {} phases",
        scenario.id,
        scenario.frequency_values.len(),
        scenario.phase_values.len()
    );
    let set = synthesize_set(5000, DEFAULT_KEY, &scenario, &SynthConfig::default(), 4)?;
    let d = traces_to_disclosure(&set, &default_grid(set.n_traces()))?;
    println!("mean rho {:.3}, disclosure {:?}", mean_rho(&set)?, d);
    Ok(())
}
