//! Averaging consecutive samples partly resynchronizes frequency-scaled traces.

use desync_bench::attack::mean_rho;
use desync_bench::dsp::aggregate_set;
use desync_bench::leakage::{synthesize_set, SynthConfig};
use desync_bench::runner::DEFAULT_KEY;
use desync_bench::scenario::builtin;

fn main() -> desync_bench::Result<()> {
    let set = synthesize_set(3000, DEFAULT_KEY, &builtin("F1").unwrap(), &SynthConfig::default(), 5)?;
    for n in [1, 10, 100, 1000] {
        let agg = aggregate_set(&set, n)?;
        println!("aggregate {n:>4}: {:>5} samples, mean rho {:.3}", agg.n_samples(), mean_rho(&agg)?);
    }
    Ok(())
}
