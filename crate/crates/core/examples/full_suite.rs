//! Every built-in scenario through synthesis, filtering, CPA and templates.
//!
//! cargo run --release --example full_suite -- [scale] [out_dir]

use desync_bench::runner::{report_text, run_suite, SuiteOptions};

fn main() -> desync_bench::Result<()> {
    let mut args = std::env::args().skip(1);
    let scale: f64 = args.next().map_or(0.02, |s| s.parse().expect("scale"));
    let out = args.next().unwrap_or_else(|| "desync-out".into());
    let report = run_suite(&SuiteOptions::new(scale, 1, &out))?;
    print!("{}", report_text(&report));
    Ok(())
}
