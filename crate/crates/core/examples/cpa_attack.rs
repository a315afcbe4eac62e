//! Correlation attack on the first AES round, rank of the true key byte as the
//! number of traces grows.
//!
//! cargo run --release --example cpa_attack -- [scenario] [n_traces]

use desync_bench::attack::{cpa_bytes, default_grid, disclosure_from};
use desync_bench::leakage::{synthesize_set, SynthConfig};
use desync_bench::runner::DEFAULT_KEY;
use desync_bench::scenario::builtin;

fn main() -> desync_bench::Result<()> {
    let mut args = std::env::args().skip(1);
    let id = args.next().unwrap_or_else(|| "Synch".into());
    let n: usize = args.next().map_or(2000, |s| s.parse().expect("n_traces"));
    let set = synthesize_set(n, DEFAULT_KEY, &builtin(&id).expect("scenario"), &SynthConfig::default(), 1)?;

    let grid = default_grid(n);
    let all: Vec<usize> = (0..16).collect();
    let results = cpa_bytes(&set, &all, &grid)?;
    print!("byte");
    for g in &grid {
        print!("{g:>7}");
    }
    println!("   guess  key");
    for r in &results {
        print!("{:>4}", r.byte_idx);
        for p in &r.rank_curve {
            print!("{:>7}", p.rank);
        }
        println!("   0x{:02x}   0x{:02x}", r.best_guess, set.key[r.byte_idx]);
    }
    match disclosure_from(&results) {
        Some(d) => println!("full key at {d} traces"),
        None => println!("key not recovered with {n} traces"),
    }
    Ok(())
}
