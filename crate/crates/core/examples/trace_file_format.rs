//! Write a trace set to a DSB1 file, read it back and compare.

use desync_bench::format::{encoded_len, read_from_path, write_to_path};
use desync_bench::leakage::{synthesize_set, SynthConfig};
use desync_bench::runner::DEFAULT_KEY;
use desync_bench::scenario::builtin;

fn main() -> desync_bench::Result<()> {
    let set = synthesize_set(200, DEFAULT_KEY, &builtin("P1").unwrap(), &SynthConfig::default(), 3)?;
    let path = std::env::temp_dir().join("desync_example.dsb1");

    let written = write_to_path(&set, &path)?;
    assert_eq!(written, encoded_len(set.n_traces(), set.n_samples()));
    let back = read_from_path(&path)?;
    println!("{} bytes -> {}", written, path.display());
    println!("round trip identical: {}", back == set);
    std::fs::remove_file(&path)?;
    Ok(())
}
