//! Acceptance checks. Every test writes one `PASS`/`FAIL` line straight to
//! stdout (bypassing the harness capture) before asserting, so a plain
//! `cargo test` log records the outcome of each criterion.

use std::io::Write;
use std::sync::OnceLock;
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use desync_bench::attack::{
    build_templates, cpa_bytes, default_grid, disclosure_from, guessing_entropy,
    likelihood_table, mean_rho, peak_correlation, traces_to_disclosure, CpaAccumulator,
    DEFAULT_POI_COUNT,
};
use desync_bench::dsp::{aggregate, aggregate_set, high_pass, high_pass_set, FilterSpec};
use desync_bench::leakage::{synthesize_profiling_set, synthesize_set, SynthConfig};
use desync_bench::mmcm::{
    build_config_table, default_input_clock, mmcm_output_frequency, solve_mmcm, ConfigTable,
    SOLVE_TOLERANCE_MHZ,
};
use desync_bench::rdvfs::{DfsState, SimConfig};
use desync_bench::runner::{
    calibrate_noise, run_suite, Calibration, SuiteOptions, DEFAULT_KEY, TA_ATTACK_CAP,
};
use desync_bench::scenario::{builtin, SCENARIOS};
use desync_bench::{Frequency, TraceSet};

const SEED: u64 = 1;
const TARGET_RHO: f64 = 0.45;
const MAX_RHO: f64 = 0.6;
/// Desk-scale attack budget for the qualitative checks.
const ATTACK_TRACES: usize = 10_000;
const PROFILING_PER_CLASS: usize = 100;
const GE_REPETITIONS: usize = 20;

fn verdict(name: &str, pass: bool, elapsed: Duration, limit_s: u64, detail: &str) {
    let within = elapsed.as_secs_f64() <= limit_s as f64;
    let ok = pass && within;
    let line = format!(
        "[{}] {name}: {detail} ({:.1} s, limit {limit_s} s{})\n",
        if ok { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64(),
        if within { "" } else { ", over time" },
    );
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(ok, "{name}: {detail}");
}

struct Calibrated {
    calibration: Calibration,
    elapsed: Duration,
}

fn calibrated() -> &'static Calibrated {
    static CELL: OnceLock<Calibrated> = OnceLock::new();
    CELL.get_or_init(|| {
        let t = Instant::now();
        let calibration = calibrate_noise(&SynthConfig::default(), TARGET_RHO, MAX_RHO, SEED)
            .expect("calibration");
        Calibrated {
            calibration,
            elapsed: t.elapsed(),
        }
    })
}

fn calibrated_config() -> SynthConfig {
    let mut cfg = SynthConfig::default();
    cfg.model.noise_sigma = calibrated().calibration.sigma;
    cfg
}

fn attack_set(id: &str, n: usize, cfg: &SynthConfig) -> TraceSet {
    let scenario = builtin(id).expect("built-in scenario");
    synthesize_set(n, DEFAULT_KEY, &scenario, cfg, SEED ^ 0x5eed).expect("synthesis")
}

fn fmt_disc(d: Option<usize>) -> String {
    d.map_or("none".into(), |n| n.to_string())
}

// Independent SBOX: multiplicative inverse in GF(2^8) followed by the affine map.
fn gf_mul(mut a: u8, mut b: u8) -> u8 {
    let mut p = 0u8;
    while b != 0 {
        if b & 1 != 0 {
            p ^= a;
        }
        let hi = a & 0x80;
        a <<= 1;
        if hi != 0 {
            a ^= 0x1b;
        }
        b >>= 1;
    }
    p
}

fn oracle_sbox() -> [u8; 256] {
    let mut s = [0u8; 256];
    for (x, slot) in s.iter_mut().enumerate() {
        let inv = if x == 0 {
            0
        } else {
            (1..=255u8).find(|&y| gf_mul(x as u8, y) == 1).unwrap()
        };
        let mut v = inv;
        for r in 1..5 {
            v ^= inv.rotate_left(r);
        }
        *slot = v ^ 0x63;
    }
    s
}

/// Exact correlation: f32 samples are integers after scaling by 2^44, so all
/// moment sums fit an i128 without rounding.
fn exact_pearson(x: &[f32], y: &[u32]) -> f64 {
    let xi: Vec<i128> = x
        .iter()
        .map(|&v| {
            let s = v as f64 * 2f64.powi(44);
            assert_eq!(s.fract(), 0.0, "sample {v} not representable");
            s as i128
        })
        .collect();
    let n = x.len() as i128;
    let (mut sx, mut sy, mut sxy, mut sxx, mut syy) = (0i128, 0i128, 0i128, 0i128, 0i128);
    for (&a, &b) in xi.iter().zip(y) {
        let b = b as i128;
        sx += a;
        sy += b;
        sxy += a * b;
        sxx += a * a;
        syy += b * b;
    }
    let num = (n * sxy - sx * sy) as f64;
    num / (((n * sxx - sx * sx) as f64) * ((n * syy - sy * sy) as f64)).sqrt()
}

fn two_pass_pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    sxy / (sxx * syy).sqrt()
}

#[test]
fn c00_calibration() {
    let c = calibrated();
    let cal = c.calibration;
    let pass = cal.disclosure == Some(200) && (0.3..=0.6).contains(&cal.rho);
    verdict(
        "calibration",
        pass,
        c.elapsed,
        120,
        &format!(
            "sigma {:.4}, Synch rho_raw {:.3} in [0.3, 0.6], disclosure {} (want 200)",
            cal.sigma,
            cal.rho,
            fmt_disc(cal.disclosure)
        ),
    );
}

#[test]
fn c01_cpa_matches_two_pass_oracle() {
    let t = Instant::now();
    let sbox = oracle_sbox();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let (mut worst, mut worst_exact) = (0.0f64, 0.0f64);
    for _ in 0..100 {
        let (n, s) = (50, 200);
        let pts: Vec<[u8; 16]> = (0..n).map(|_| rng.random()).collect();
        let offset = rng.random_range(-50.0..500.0f32);
        let scale = rng.random_range(0.1..20.0f32);
        let samples = Array2::from_shape_fn((n, s), |_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            offset + scale * z as f32
        });
        let byte = rng.random_range(0..16usize);
        let shift = samples.row(0).iter().map(|&v| v as f64).collect();
        let mut acc = CpaAccumulator::new(&[byte], shift);
        for (pt, row) in pts.iter().zip(samples.rows()) {
            acc.update(pt, row);
        }
        let (corr, _) = acc.correlations(0);
        for k in 0..256 {
            let hw: Vec<u32> = pts
                .iter()
                .map(|p| sbox[(p[byte] ^ k as u8) as usize].count_ones())
                .collect();
            let y: Vec<f64> = hw.iter().map(|&v| v as f64).collect();
            for j in 0..s {
                let x32: Vec<f32> = samples.column(j).to_vec();
                let x: Vec<f64> = x32.iter().map(|&v| v as f64).collect();
                let got = corr[[k, j]];
                let want = two_pass_pearson(&x, &y);
                worst = worst.max((got - want).abs() / want.abs().max(1e-12));
                let exact = exact_pearson(&x32, &hw);
                worst_exact = worst_exact.max((got - exact).abs() / exact.abs().max(1e-12));
            }
        }
    }
    verdict(
        "criterion 1 (one-pass CPA vs two-pass oracle)",
        worst <= 1e-9 && worst_exact <= 1e-9,
        t.elapsed(),
        30,
        &format!(
            "100 sets of 50 x 200, max relative deviation {worst:.2e} from two-pass, \
             {worst_exact:.2e} from exact integer oracle (limit 1e-9)"
        ),
    );
}

#[test]
fn c02_mmcm_round_trip_and_lookup() {
    let t = Instant::now();
    let f_in = default_input_clock();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut bad = Vec::new();
    for _ in 0..500 {
        let f = Frequency::from_eighths(rng.random_range(40..=6400));
        match solve_mmcm(f, f_in) {
            Ok(cfg) if (mmcm_output_frequency(&cfg, f_in.mhz()) - f.mhz()).abs() <= SOLVE_TOLERANCE_MHZ => {}
            _ => bad.push(f.mhz()),
        }
    }

    let mut tables: Vec<ConfigTable> = SCENARIOS
        .iter()
        .map(|(id, _)| {
            let s = builtin(id).unwrap();
            ConfigTable::from_frequencies(&s.frequency_values, f_in).unwrap()
        })
        .collect();
    for (lo, hi, step) in [(40.0, 60.0, 0.125), (10.0, 90.0, 1.0), (38.375, 39.5, 0.125)] {
        tables.push(build_config_table(lo, hi, step, f_in).unwrap());
    }
    let mut mismatches = 0;
    for table in &tables {
        let lo = table.lines()[0].target.eighths().saturating_sub(16);
        let hi = table.lines().last().unwrap().target.eighths() + 16;
        for e in lo.max(40)..=hi {
            let f = Frequency::from_eighths(e);
            let scan = table.lines().iter().position(|l| l.target == f);
            if table.lookup_line(f).ok() != scan {
                mismatches += 1;
            }
        }
    }
    let preview: Vec<String> = bad.iter().take(4).map(|f| format!("{f}")).collect();
    verdict(
        "criterion 2 (MMCM round trip, two-level lookup)",
        bad.is_empty() && mismatches == 0,
        t.elapsed(),
        30,
        &format!(
            "{} of 500 random grid frequencies unsolvable within {SOLVE_TOLERANCE_MHZ} MHz (e.g. {}); \
             lookup/scan mismatches {mismatches} over {} tables",
            bad.len(),
            preview.join(", "),
            tables.len()
        ),
    );
}

#[test]
fn c03_dfs_state_machine() {
    let t = Instant::now();
    let f_in = default_input_clock();
    let sim = SimConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let scenarios: Vec<_> = ["F1", "F2", "F3", "P1", "V3"].iter().map(|id| builtin(id).unwrap()).collect();
    let tables: Vec<_> = scenarios
        .iter()
        .map(|s| ConfigTable::from_frequencies(&s.frequency_values, f_in).unwrap())
        .collect();
    let (mut gated, mut mutated, mut rejected, mut wrong_busy) = (0, 0, 0, 0);
    for _ in 0..1000 {
        let which = rng.random_range(0..scenarios.len());
        let (s, table) = (&scenarios[which], &tables[which]);
        let mut st = DfsState::new(s.frequency_values[0], 0.0, table, &sim).unwrap();
        for _ in 0..rng.random_range(10..60) {
            if rng.random_bool(0.5) {
                let f = *s.frequency_values.choose(&mut rng).unwrap();
                let p = rng.random_range(0..96) as f64 * 3.75;
                let before = st.clone();
                let busy = st.ack();
                let accepted = st
                    .request(f, p, rng.random_bool(0.7), rng.random_bool(0.5), table)
                    .unwrap();
                if busy == accepted {
                    wrong_busy += 1;
                }
                if !accepted {
                    rejected += 1;
                    if st != before {
                        mutated += 1;
                    }
                }
            } else {
                st.tick(rng.random_range(0.05..30.0));
            }
            if !st.output_locked() {
                gated += 1;
            }
        }
    }
    verdict(
        "criterion 3 (DFS state machine)",
        gated == 0 && mutated == 0 && wrong_busy == 0 && rejected > 0,
        t.elapsed(),
        30,
        &format!(
            "1000 sequences: {gated} gated outputs, {rejected} busy rejections, \
             {mutated} mutated on rejection, {wrong_busy} busy/accept disagreements"
        ),
    );
}

#[test]
fn c04_hpf_and_aggregation() {
    let t = Instant::now();
    let fs = 250e6;
    let spec = FilterSpec::default();
    let n = 20_000;

    let dc = 137.25;
    let y = high_pass(&vec![dc; n], &spec, fs).unwrap();
    let dc_ratio = y.iter().fold(0.0f64, |m, v| m.max(v.abs())) / dc;

    let f = 10.0 * spec.cutoff_hz;
    let x: Vec<f64> = (0..n)
        .map(|i| (2.0 * std::f64::consts::PI * f * i as f64 / fs).sin())
        .collect();
    let y = high_pass(&x, &spec, fs).unwrap();
    // Amplitude from the RMS of whole periods in the interior.
    let period = (fs / f).round() as usize;
    let (a, b) = (n / 4, n / 4 + 40 * period);
    let rms = |v: &[f64]| (v.iter().map(|s| s * s).sum::<f64>() / v.len() as f64).sqrt();
    let gain = rms(&y[a..b]) / rms(&x[a..b]);

    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let r: Vec<f64> = (0..1001).map(|_| rng.random_range(-5.0..5.0)).collect();
    let identity = aggregate(&r, 1).unwrap() == r;
    let examples = aggregate(&[1.0, 2.0, 3.0, 4.0], 2).unwrap() == vec![1.5, 3.5]
        && aggregate(&[1.0, 2.0, 3.0], 2).unwrap() == vec![1.5, 3.0];
    let constant = aggregate(&[2.5; 1001], 100).unwrap().iter().all(|&v| v == 2.5);
    let scaled: Vec<f64> = r.iter().map(|v| 4.0 * v).collect();
    let commutes = aggregate(&scaled, 10)
        .unwrap()
        .iter()
        .zip(aggregate(&r, 10).unwrap())
        .all(|(a, b)| (a - 4.0 * b).abs() <= 1e-12 * a.abs().max(1.0));

    let pass = dc_ratio < 1e-6
        && (gain - 1.0).abs() <= 0.01
        && identity
        && examples
        && constant
        && commutes;
    verdict(
        "criterion 4 (HPF and aggregation)",
        pass,
        t.elapsed(),
        10,
        &format!(
            "DC residue {dc_ratio:.1e} (< 1e-6), 1.25 MHz gain {gain:.5} (within 1%), \
             n=1 identity {identity}, worked examples {examples}, constant {constant}, scaling {commutes}"
        ),
    );
}

#[test]
fn c05_template_sanity() {
    let t = Instant::now();
    let synch = builtin("Synch").unwrap();
    let mut clean = SynthConfig::default();
    clean.model.noise_sigma = 0.0;
    let set = synthesize_profiling_set(4, DEFAULT_KEY, &synch, &clean, SEED).unwrap();
    let mut self_ok = true;
    for b in 0..16 {
        let tpl = build_templates(&set, b, DEFAULT_POI_COUNT).unwrap();
        let table = likelihood_table(&tpl, &set).unwrap();
        let ge = guessing_entropy(&table, &set, b, 5, &[10, 50], SEED).unwrap();
        self_ok &= ge.success();
    }

    // Pure noise: profiling and attack traces carry no information.
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut noise = |n: usize| {
        let pts: Vec<[u8; 16]> = (0..n).map(|_| rng.random()).collect();
        let s = Array2::from_shape_fn((n, 40), |_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            100.0 + 3.0 * z as f32
        });
        TraceSet::new(DEFAULT_KEY, pts, s, "noise").unwrap()
    };
    let prof = noise(256 * 20);
    let attack = noise(20_000);
    let mut total = 0.0;
    for b in 0..16 {
        let tpl = build_templates(&prof, b, DEFAULT_POI_COUNT).unwrap();
        let table = likelihood_table(&tpl, &attack).unwrap();
        let ge = guessing_entropy(&table, &attack, b, 50, &[100], SEED + b as u64).unwrap();
        total += ge.ge[0];
    }
    let noise_ge = total / 16.0;
    verdict(
        "criterion 5 (template sanity)",
        self_ok && (noise_ge - 128.5).abs() <= 10.0,
        t.elapsed(),
        120,
        &format!(
            "noise-free self attack GE=1 on all bytes: {self_ok}; GE against noise {noise_ge:.1} \
             (128.5 +/- 10, 50 repetitions, mean of 16 bytes)"
        ),
    );
}

#[test]
fn c06_hpf_recovers_voltage_scaling() {
    let t = Instant::now();
    let cfg = calibrated_config();
    let raw = attack_set("V3", ATTACK_TRACES, &cfg);
    let hpf = high_pass_set(&raw, &FilterSpec::default()).unwrap();
    let grid = default_grid(ATTACK_TRACES);
    let (rho_raw, rho_hpf) = (mean_rho(&raw).unwrap(), mean_rho(&hpf).unwrap());
    let d_raw = traces_to_disclosure(&raw, &grid).unwrap();
    let d_hpf = traces_to_disclosure(&hpf, &grid).unwrap();
    let fewer = match (d_hpf, d_raw) {
        (Some(h), Some(r)) => h < r,
        (Some(_), None) => true,
        _ => false,
    };
    verdict(
        "criterion 6 (HPF on voltage scaling, V3)",
        rho_hpf >= 3.0 * rho_raw && fewer,
        t.elapsed(),
        300,
        &format!(
            "rho raw {rho_raw:.3}, hpf {rho_hpf:.3} (ratio {:.2}, want >= 3); disclosure raw {}, hpf {}",
            rho_hpf / rho_raw,
            fmt_disc(d_raw),
            fmt_disc(d_hpf)
        ),
    );
}

#[test]
fn c07_phase_shift_costs_little() {
    let t = Instant::now();
    let cfg = calibrated_config();
    let grid = default_grid(ATTACK_TRACES);
    let synch = traces_to_disclosure(&attack_set("Synch", ATTACK_TRACES, &cfg), &grid).unwrap();
    let p1 = traces_to_disclosure(&attack_set("P1", ATTACK_TRACES, &cfg), &grid).unwrap();
    let pass = match (p1, synch) {
        (Some(p), Some(s)) => p as f64 <= 2.5 * s as f64,
        _ => false,
    };
    verdict(
        "criterion 7 (phase shifting, P1 vs Synch)",
        pass,
        t.elapsed(),
        180,
        &format!("raw disclosure P1 {}, Synch {} (want P1 <= 2.5x)", fmt_disc(p1), fmt_disc(synch)),
    );
}

#[test]
fn c08_wide_frequency_range_is_harder() {
    let t = Instant::now();
    let cal = calibrated().calibration;
    let budget = 50 * cal.disclosure.unwrap_or(200);
    let cfg = calibrated_config();
    let grid = default_grid(budget);
    let mut outcome = Vec::new();
    for id in ["F1", "F3"] {
        let raw = aggregate_set(&attack_set(id, budget, &cfg), 100).unwrap();
        let hpf = aggregate_set(
            &high_pass_set(&attack_set(id, budget, &cfg), &FilterSpec::default()).unwrap(),
            100,
        )
        .unwrap();
        let all: Vec<usize> = (0..16).collect();
        let d_raw = disclosure_from(&cpa_bytes(&raw, &all, &grid).unwrap());
        let d_hpf = disclosure_from(&cpa_bytes(&hpf, &all, &grid).unwrap());
        outcome.push((id, d_raw, d_hpf));
    }
    let (f1, f3) = (outcome[0], outcome[1]);
    let pass = f1.1.is_some() && f1.2.is_some() && f3.1.is_none() && f3.2.is_none();
    verdict(
        "criterion 8 (F1 vs F3, aggregation 100)",
        pass,
        t.elapsed(),
        600,
        &format!(
            "budget {budget}: F1 disclosure raw {} hpf {}; F3 raw {} hpf {} (want F1 both, F3 neither)",
            fmt_disc(f1.1),
            fmt_disc(f1.2),
            fmt_disc(f3.1),
            fmt_disc(f3.2)
        ),
    );
}

fn bootstrap_width(set: &TraceSet, resamples: usize, seed: u64) -> (f64, f64) {
    let sbox = oracle_sbox();
    let y: Vec<f64> = set
        .plaintexts
        .iter()
        .map(|p| sbox[(p[0] ^ set.key[0]) as usize].count_ones() as f64)
        .collect();
    let all: Vec<usize> = (0..set.n_traces()).collect();
    let rho = peak_correlation(set.samples.view(), &y, &all).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stats: Vec<f64> = (0..resamples)
        .map(|_| {
            let rows: Vec<usize> = (0..all.len()).map(|_| rng.random_range(0..all.len())).collect();
            peak_correlation(set.samples.view(), &y, &rows).unwrap()
        })
        .collect();
    stats.sort_by(f64::total_cmp);
    let lo = stats[(0.025 * resamples as f64).floor() as usize];
    let hi = stats[((0.975 * resamples as f64).ceil() as usize).min(resamples - 1)];
    (rho, hi - lo)
}

#[test]
fn c09_step_count_barely_matters() {
    let t = Instant::now();
    let cfg = calibrated_config();
    let (r3, w3) = bootstrap_width(&attack_set("F3", ATTACK_TRACES, &cfg), 200, SEED);
    let (r125, w125) = bootstrap_width(&attack_set("F3_125", ATTACK_TRACES, &cfg), 200, SEED + 1);
    let diff = (r3 - r125).abs();
    verdict(
        "criterion 9 (F3 vs F3_125 at equal budget)",
        diff < w3.min(w125),
        t.elapsed(),
        600,
        &format!(
            "byte 0 raw rho F3 {r3:.4} (95% width {w3:.4}), F3_125 {r125:.4} (width {w125:.4}); \
             |diff| {diff:.4} must be below both widths"
        ),
    );
}

#[test]
fn c10_templates_transfer_across_chips() {
    let t = Instant::now();
    let cfg = calibrated_config();
    let profiling_key = {
        let mut k = DEFAULT_KEY;
        k.rotate_left(3);
        k.map(|b| b ^ 0x5a)
    };
    let grid = default_grid(TA_ATTACK_CAP);
    let mut summary = Vec::new();
    let mut pass = true;
    for id in ["C1", "C2"] {
        let s = builtin(id).unwrap();
        let prof = synthesize_profiling_set(PROFILING_PER_CLASS, profiling_key, &s, &cfg, SEED).unwrap();
        let attack = synthesize_set(TA_ATTACK_CAP * 4, DEFAULT_KEY, &s, &cfg, SEED ^ 0x5eed).unwrap();
        let mut ok = 0;
        for b in 0..16 {
            let tpl = build_templates(&prof, b, DEFAULT_POI_COUNT).unwrap();
            let table = likelihood_table(&tpl, &attack).unwrap();
            let ge = guessing_entropy(&table, &attack, b, GE_REPETITIONS, &grid, SEED + b as u64).unwrap();
            ok += ge.success() as usize;
        }
        pass &= ok == 16;
        summary.push(format!(
            "{id} ({} -> {}): {ok}/16 bytes at GE=1",
            prof.chip_label, attack.chip_label
        ));
    }
    verdict(
        "criterion 10 (templates across chips)",
        pass,
        t.elapsed(),
        180,
        &format!("{}, {} traces", summary.join("; "), TA_ATTACK_CAP),
    );
}

#[test]
fn c11_suite_is_deterministic() {
    let t = Instant::now();
    let mut reports = Vec::new();
    for _ in 0..2 {
        let dir = tempfile::tempdir().unwrap();
        let opts = SuiteOptions::new(0.02, SEED, dir.path());
        run_suite(&opts).unwrap();
        reports.push(std::fs::read(dir.path().join("report.csv")).unwrap());
    }
    let same = reports[0] == reports[1];
    let rows = String::from_utf8_lossy(&reports[0]).lines().count() - 1;
    verdict(
        "criterion 11 (suite determinism)",
        same,
        t.elapsed(),
        900,
        &format!("two scale-0.02 runs, report.csv byte-identical: {same} ({rows} rows)"),
    );
}
