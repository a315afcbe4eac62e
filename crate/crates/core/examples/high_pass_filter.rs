//! Voltage scaling adds slow regulator transients; the high-pass filter removes
//! them and the correlation comes back.

use desync_bench::attack::mean_rho;
use desync_bench::dsp::{butterworth_highpass, high_pass_set, magnitude_response, FilterSpec};
use desync_bench::leakage::{synthesize_set, SynthConfig};
use desync_bench::runner::DEFAULT_KEY;
use desync_bench::scenario::builtin;

fn main() -> desync_bench::Result<()> {
    let spec = FilterSpec::default();
    let fs = 250e6;
    let sos = butterworth_highpass(&spec, fs)?;
    for f in [12.5e3, 62.5e3, 125e3, 250e3, 1.25e6] {
        println!("|H({:>8.1} kHz)|^2 = {:.3e}", f / 1e3, magnitude_response(&sos, f, fs).powi(2));
    }

    let set = synthesize_set(2000, DEFAULT_KEY, &builtin("V3").unwrap(), &SynthConfig::default(), 11)?;
    let filtered = high_pass_set(&set, &spec)?;
    println!("V3 mean rho: raw {:.3}, hpf {:.3}", mean_rho(&set)?, mean_rho(&filtered)?);
    Ok(())
}
