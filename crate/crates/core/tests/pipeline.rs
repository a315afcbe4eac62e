//! End-to-end flows through the library: synthesis, file I/O, post-processing, attacks.

use desync_bench::attack::{
    build_templates, cpa_bytes, default_grid, disclosure_from, mean_rho, template_attack,
};
use desync_bench::dsp::{aggregate_set, high_pass_set, FilterSpec};
use desync_bench::format::{read_from_path, write_to_path};
use desync_bench::leakage::{synthesize_profiling_set, synthesize_set, SynthConfig};
use desync_bench::runner::{attack_variant, run_plan, ExperimentPlan, DEFAULT_KEY};
use desync_bench::scenario::builtin;

fn config(sigma: f64) -> SynthConfig {
    let mut c = SynthConfig::default();
    c.model.noise_sigma = sigma;
    c
}

#[test]
fn file_round_trip_preserves_attack_results() {
    let dir = tempfile::tempdir().unwrap();
    let set = synthesize_set(600, DEFAULT_KEY, &builtin("Synch").unwrap(), &config(3.0), 21).unwrap();
    let path = dir.path().join("s.dsb1");
    write_to_path(&set, &path).unwrap();
    let back = read_from_path(&path).unwrap();
    assert_eq!(back, set);

    let grid = [200, 600];
    let a = cpa_bytes(&set, &[0, 7, 15], &grid).unwrap();
    let b = cpa_bytes(&back, &[0, 7, 15], &grid).unwrap();
    assert_eq!(a, b);
}

#[test]
fn post_processing_on_disk_matches_in_memory() {
    let dir = tempfile::tempdir().unwrap();
    let set = synthesize_set(50, DEFAULT_KEY, &builtin("V2").unwrap(), &config(2.0), 4).unwrap();
    let spec = FilterSpec::default();
    let mem = aggregate_set(&high_pass_set(&set, &spec).unwrap(), 10).unwrap();

    let path = dir.path().join("v2.dsb1");
    write_to_path(&set, &path).unwrap();
    let disk = aggregate_set(&high_pass_set(&read_from_path(&path).unwrap(), &spec).unwrap(), 10).unwrap();
    assert_eq!(mem.samples, disk.samples);
    assert_eq!(disk.n_samples(), set.n_samples().div_ceil(10));
    assert!((disk.sample_rate_hz - set.sample_rate_hz / 10.0).abs() < 1e-6);
}

#[test]
fn synthesis_is_reproducible_and_seed_sensitive() {
    let s = builtin("F2").unwrap();
    let a = synthesize_set(20, DEFAULT_KEY, &s, &config(1.0), 9).unwrap();
    let b = synthesize_set(20, DEFAULT_KEY, &s, &config(1.0), 9).unwrap();
    let c = synthesize_set(20, DEFAULT_KEY, &s, &config(1.0), 10).unwrap();
    assert_eq!(a, b);
    assert_ne!(a.samples, c.samples);
}

#[test]
fn low_noise_synch_discloses_quickly() {
    let set = synthesize_set(500, DEFAULT_KEY, &builtin("Synch").unwrap(), &config(1.0), 2).unwrap();
    let all: Vec<usize> = (0..16).collect();
    let res = cpa_bytes(&set, &all, &default_grid(500)).unwrap();
    assert_eq!(disclosure_from(&res), Some(200));
    for r in &res {
        assert_eq!(r.best_guess, DEFAULT_KEY[r.byte_idx]);
    }
}

#[test]
fn desynchronization_lowers_correlation() {
    let cfg = config(2.0);
    let rho = |id: &str| {
        let s = synthesize_set(1500, DEFAULT_KEY, &builtin(id).unwrap(), &cfg, 8).unwrap();
        mean_rho(&s).unwrap()
    };
    let synch = rho("Synch");
    let f3 = rho("F3");
    assert!(synch > 4.0 * f3, "synch {synch} f3 {f3}");
}

#[test]
fn templates_from_other_key_recover_attack_key() {
    let s = builtin("Synch").unwrap();
    let cfg = config(3.0);
    let prof = synthesize_profiling_set(30, [0xa5; 16], &s, &cfg, 1).unwrap();
    let attack = synthesize_set(500, DEFAULT_KEY, &s, &cfg, 2).unwrap();
    for b in [0, 5, 15] {
        let t = build_templates(&prof, b, 5).unwrap();
        let ge = template_attack(&t, &attack, b, 5, &[100, 500], 3).unwrap();
        assert!(ge.success(), "byte {b}: {:?}", ge.ge);
    }
}

#[test]
fn plan_writes_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let mut plan = ExperimentPlan::new(builtin("P1").unwrap(), 400, 4);
    plan.synth = config(2.0);
    plan.out_dir = Some(dir.path().to_path_buf());
    plan.ge_repetitions = 2;
    let rows = run_plan(&plan).unwrap();
    assert_eq!(rows.len(), plan.aggregation_levels.len());
    for name in ["P1_attack.dsb1", "P1_profiling.dsb1", "P1_curves.csv", "P1_corr.csv"] {
        assert!(dir.path().join(name).exists(), "{name} missing");
    }
    let corr = std::fs::read_to_string(dir.path().join("P1_corr.csv")).unwrap();
    assert!(corr.starts_with("sample,byte0,"));
}

#[test]
fn aggregated_variant_survives_tiny_windows() {
    let set = synthesize_set(300, DEFAULT_KEY, &builtin("Synch").unwrap(), &config(2.0), 5).unwrap();
    let prof = synthesize_profiling_set(3, [1; 16], &builtin("Synch").unwrap(), &config(2.0), 6).unwrap();
    let plan = ExperimentPlan::new(builtin("Synch").unwrap(), 300, 3);
    let agg = aggregate_set(&set, 1000).unwrap();
    let prof_agg = aggregate_set(&prof, 1000).unwrap();
    assert_eq!(agg.n_samples(), 2);
    let v = attack_variant(&agg, Some(&prof_agg), &plan).unwrap();
    assert!(v.ta.is_some());
}
