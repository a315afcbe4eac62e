//! First-order regulator output for a few voltage steps, printed as CSV.

use desync_bench::rdvfs::regulator_response;

fn main() {
    let steps = [(0.0, 0.75), (150.0, 1.05), (300.0, 0.87), (450.0, 0.93)];
    // 1 MS/s is plenty for a 50 us time constant.
    let v = regulator_response(1.0, &steps, 50.0, 1e6, 600.0);
    println!("t_us,voltage_v");
    for (i, x) in v.iter().enumerate().step_by(10) {
        println!("{i},{x:.4}");
    }
}
