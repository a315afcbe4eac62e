//! Find the noise level at which the synchronous scenario behaves like the
//! reference measurement (disclosure at 200 traces, rho near 0.45).

use desync_bench::leakage::SynthConfig;
use desync_bench::runner::calibrate_noise;

fn main() -> desync_bench::Result<()> {
    let c = calibrate_noise(&SynthConfig::default(), 0.45, 0.6, 1)?;
    println!("sigma {:.4}  rho {:.3}  disclosure {:?}", c.sigma, c.rho, c.disclosure);
    Ok(())
}
