//! Experiment plans, noise calibration and the summary report.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::attack::{
    build_templates, cpa_bytes, default_grid, disclosure_from, guessing_entropy,
    likelihood_table, mean_rho, AttackError, CpaResult, DEFAULT_POI_COUNT,
};
use crate::dsp::{aggregate_set, high_pass_set, DspError, FilterSpec};
use crate::format::{encoded_len, write_to_path, FormatError};
use crate::leakage::{synthesize_profiling_set, synthesize_set, LeakageError, SynthConfig};
use crate::scenario::{builtin, ScenarioError, ScenarioSpec, SCENARIOS};
use crate::trace::TraceSet;

/// Attack budgets at scale 1.
pub const FULL_ATTACK_TRACES: usize = 100_000;
pub const FULL_PROFILING_PER_CLASS: usize = 1_000;
/// Traces used per template-attack repetition, at most.
pub const TA_ATTACK_CAP: usize = 1_000;
pub const DEFAULT_GE_REPETITIONS: usize = 20;
pub const DEFAULT_SCALE: f64 = 0.1;

pub const DEFAULT_KEY: [u8; 16] = [
    0x2b, 0x7e, 0x15, 0x16, 0x28, 0xae, 0xd2, 0xa6, 0xab, 0xf7, 0x15, 0x88, 0x09, 0xcf, 0x4f, 0x3c,
];

#[derive(Debug, thiserror::Error)]
pub enum RunnerError {
    #[error("invalid plan: {0}")]
    Validation(String),
    #[error("need {needed} bytes of disk in {dir}, only {available} available")]
    InsufficientDisk {
        dir: PathBuf,
        needed: u64,
        available: u64,
    },
    #[error("calibration failed: {0}")]
    Calibration(String),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Leakage(#[from] LeakageError),
    #[error(transparent)]
    Dsp(#[from] DspError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error(transparent)]
    Format(#[from] FormatError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentPlan {
    pub scenario: ScenarioSpec,
    pub key: [u8; 16],
    pub n_attack_traces: usize,
    /// 0 skips the template attack.
    pub n_profiling_per_class: usize,
    pub aggregation_levels: Vec<usize>,
    pub include_hpf: bool,
    pub filter: FilterSpec,
    pub synth: SynthConfig,
    pub synth_seed: u64,
    pub attack_seed: u64,
    pub ge_repetitions: usize,
    pub poi_count: usize,
    /// Raw sets and curves are written here when present.
    pub out_dir: Option<PathBuf>,
}

impl ExperimentPlan {
    pub fn new(scenario: ScenarioSpec, n_attack_traces: usize, n_profiling_per_class: usize) -> Self {
        let aggregation_levels = default_aggregation_levels(&scenario.id).to_vec();
        Self {
            scenario,
            key: DEFAULT_KEY,
            n_attack_traces,
            n_profiling_per_class,
            aggregation_levels,
            include_hpf: true,
            filter: FilterSpec::default(),
            synth: SynthConfig::default(),
            synth_seed: 1,
            attack_seed: 2,
            ge_repetitions: DEFAULT_GE_REPETITIONS,
            poi_count: DEFAULT_POI_COUNT,
            out_dir: None,
        }
    }

    pub fn validate(&self) -> Result<(), RunnerError> {
        let fail = |m: &str| Err(RunnerError::Validation(m.into()));
        if self.n_attack_traces == 0 {
            return fail("need at least one attack trace");
        }
        if self.n_profiling_per_class == 1 {
            return fail("templates need at least 2 profiling traces per class");
        }
        if self.aggregation_levels.is_empty() || self.aggregation_levels.contains(&0) {
            return fail("aggregation levels must be non-empty and positive");
        }
        if self.ge_repetitions == 0 || self.poi_count == 0 {
            return fail("repetitions and poi count must be positive");
        }
        Ok(())
    }

    pub fn ta_budget(&self) -> usize {
        self.n_attack_traces.min(TA_ATTACK_CAP)
    }

    /// Disk needed for the raw attack and profiling sets.
    pub fn disk_bytes(&self) -> u64 {
        let s = self.synth.n_samples_for(&self.scenario);
        encoded_len(self.n_attack_traces, s) + encoded_len(256 * self.n_profiling_per_class, s)
    }
}

/// Aggregation levels reported per scenario.
pub fn default_aggregation_levels(id: &str) -> &'static [usize] {
    match id {
        "C1" | "C2" | "V1" | "V2" | "V3" => &[1],
        _ => &[1, 100, 1000],
    }
}

/// One line of the summary: a scenario at one aggregation level.
#[derive(Debug, Clone, PartialEq, serde::Serialize)]
pub struct ReportRow {
    pub scenario: String,
    pub aggregate: usize,
    pub rho_raw: Option<f64>,
    pub rho_hpf: Option<f64>,
    /// Traces to disclosure; `None` is a failure.
    pub cpa_raw: Option<Option<usize>>,
    pub cpa_hpf: Option<Option<usize>>,
    pub ta_raw: Option<bool>,
    pub ta_hpf: Option<bool>,
    pub error: Option<String>,
}

impl ReportRow {
    fn empty(scenario: &str, aggregate: usize) -> Self {
        Self {
            scenario: scenario.into(),
            aggregate,
            rho_raw: None,
            rho_hpf: None,
            cpa_raw: None,
            cpa_hpf: None,
            ta_raw: None,
            ta_hpf: None,
            error: None,
        }
    }
}

/// Result of attacking one processed variant.
#[derive(Debug, Clone)]
pub struct VariantResult {
    pub rho: f64,
    pub cpa: Vec<CpaResult>,
    pub disclosure: Option<usize>,
    pub ta: Option<bool>,
}

/// Runs every attack on one processed attack set (and matching profiling set).
pub fn attack_variant(
    attack: &TraceSet,
    profiling: Option<&TraceSet>,
    plan: &ExperimentPlan,
) -> Result<VariantResult, RunnerError> {
    let rho = mean_rho(attack)?;
    let all: Vec<usize> = (0..16).collect();
    let cpa = cpa_bytes(attack, &all, &default_grid(attack.n_traces()))?;
    let disclosure = disclosure_from(&cpa);
    let ta = match profiling {
        Some(prof) => {
            let grid = default_grid(plan.ta_budget());
            // Heavy aggregation can leave fewer samples than requested POIs.
            let pois = plan.poi_count.min(attack.n_samples());
            let mut ok = true;
            for b in 0..16 {
                let templates = build_templates(prof, b, pois)?;
                let table = likelihood_table(&templates, attack)?;
                let ge = guessing_entropy(
                    &table,
                    attack,
                    b,
                    plan.ge_repetitions,
                    &grid,
                    plan.attack_seed ^ b as u64,
                )?;
                ok &= ge.success();
            }
            Some(ok)
        }
        None => None,
    };
    Ok(VariantResult {
        rho,
        cpa,
        disclosure,
        ta,
    })
}

fn curve_rows(out: &mut String, variant: &str, aggregate: usize, cpa: &[CpaResult]) {
    for r in cpa {
        for p in &r.rank_curve {
            let _ = writeln!(
                out,
                "{variant},{aggregate},{},{},{},{:.6}",
                r.byte_idx, p.n_traces, p.rank, p.rho
            );
        }
    }
}

/// Correct-key correlation against sample index, one column per byte.
pub fn correlation_csv(cpa: &[CpaResult], key: &[u8; 16]) -> String {
    let mut out = String::from("sample");
    for r in cpa {
        let _ = write!(out, ",byte{}", r.byte_idx);
    }
    out.push('\n');
    let n = cpa.first().map_or(0, |r| r.correlations.ncols());
    for s in 0..n {
        let _ = write!(out, "{s}");
        for r in cpa {
            let _ = write!(out, ",{:.6}", r.correlations[[key[r.byte_idx] as usize, s]]);
        }
        out.push('\n');
    }
    out
}

/// Synthesizes the sets of a plan and fills one row per aggregation level.
/// A failing row carries its error; only plan-level problems abort.
pub fn run_plan(plan: &ExperimentPlan) -> Result<Vec<ReportRow>, RunnerError> {
    plan.validate()?;
    let id = plan.scenario.id.clone();
    let attack = synthesize_set(
        plan.n_attack_traces,
        plan.key,
        &plan.scenario,
        &plan.synth,
        plan.synth_seed,
    )?;
    let profiling = if plan.n_profiling_per_class >= 2 {
        // Profiling uses its own key, as a separate device owned by the attacker would.
        let mut prof_key = plan.key;
        prof_key.iter_mut().for_each(|b| *b = b.rotate_left(3) ^ 0x5a);
        Some(synthesize_profiling_set(
            plan.n_profiling_per_class,
            prof_key,
            &plan.scenario,
            &plan.synth,
            plan.synth_seed.wrapping_add(0x9e37_79b9_7f4a_7c15),
        )?)
    } else {
        None
    };
    if let Some(dir) = &plan.out_dir {
        std::fs::create_dir_all(dir)?;
        write_to_path(&attack, &dir.join(format!("{id}_attack.dsb1")))?;
        if let Some(p) = &profiling {
            write_to_path(p, &dir.join(format!("{id}_profiling.dsb1")))?;
        }
    }

    let filtered = if plan.include_hpf {
        let a = high_pass_set(&attack, &plan.filter);
        let p = profiling
            .as_ref()
            .map(|p| high_pass_set(p, &plan.filter))
            .transpose();
        Some(a.and_then(|a| Ok((a, p?))))
    } else {
        None
    };

    let mut curves = String::from("variant,aggregate,byte,n_traces,rank,rho\n");
    let mut corr_csv = None;
    let mut rows = Vec::new();
    for &agg in &plan.aggregation_levels {
        let mut row = ReportRow::empty(&id, agg);
        let run = |attack: &TraceSet,
                       prof: Option<&TraceSet>|
         -> Result<VariantResult, RunnerError> {
            let a = aggregate_set(attack, agg)?;
            let p = prof.map(|p| aggregate_set(p, agg)).transpose()?;
            attack_variant(&a, p.as_ref(), plan)
        };
        let outcome = (|| -> Result<(), RunnerError> {
            let raw = run(&attack, profiling.as_ref())?;
            row.rho_raw = Some(raw.rho);
            row.cpa_raw = Some(raw.disclosure);
            row.ta_raw = raw.ta;
            curve_rows(&mut curves, "raw", agg, &raw.cpa);
            if agg == 1 {
                corr_csv = Some(correlation_csv(&raw.cpa, &attack.key));
            }
            if let Some(f) = &filtered {
                let (fa, fp) = f.as_ref().map_err(|e| e.clone())?;
                let hpf = run(fa, fp.as_ref())?;
                row.rho_hpf = Some(hpf.rho);
                row.cpa_hpf = Some(hpf.disclosure);
                row.ta_hpf = hpf.ta;
                curve_rows(&mut curves, "hpf", agg, &hpf.cpa);
            }
            Ok(())
        })();
        if let Err(e) = outcome {
            row.error = Some(e.to_string());
        }
        rows.push(row);
    }
    if let Some(dir) = &plan.out_dir {
        std::fs::write(dir.join(format!("{id}_curves.csv")), curves)?;
        if let Some(c) = corr_csv {
            std::fs::write(dir.join(format!("{id}_corr.csv")), c)?;
        }
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct Calibration {
    pub sigma: f64,
    pub rho: f64,
    pub disclosure: Option<usize>,
}

pub const CALIBRATION_TRACES: usize = 1_000;
pub const CALIBRATION_GRID: [usize; 3] = [200, 500, 1_000];

/// Picks the noise level so that the synchronous scenario discloses the key at
/// the first grid point with mean peak correlation near `target_rho`.
///
/// Bisection runs on common random numbers, so `rho(sigma)` is monotone.
/// Targets are raised in steps of 0.05 up to `max_rho` until disclosure holds.
pub fn calibrate_noise(
    base: &SynthConfig,
    target_rho: f64,
    max_rho: f64,
    seed: u64,
) -> Result<Calibration, RunnerError> {
    let synch = builtin("Synch").expect("built-in scenario");
    let measure = |sigma: f64| -> Result<TraceSet, RunnerError> {
        let mut cfg = base.clone();
        cfg.model.noise_sigma = sigma;
        Ok(synthesize_set(CALIBRATION_TRACES, DEFAULT_KEY, &synch, &cfg, seed)?)
    };
    let mut target = target_rho;
    while target <= max_rho + 1e-9 {
        let (mut lo, mut hi) = (0.05, 20.0);
        for _ in 0..20 {
            let mid = 0.5 * (lo + hi);
            if mean_rho(&measure(mid)?)? > target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let sigma = 0.5 * (lo + hi);
        let set = measure(sigma)?;
        let rho = mean_rho(&set)?;
        let all: Vec<usize> = (0..16).collect();
        let disclosure = disclosure_from(&cpa_bytes(&set, &all, &CALIBRATION_GRID)?);
        if disclosure == Some(CALIBRATION_GRID[0]) {
            return Ok(Calibration {
                sigma,
                rho,
                disclosure,
            });
        }
        target += 0.05;
    }
    Err(RunnerError::Calibration(format!(
        "no noise level up to rho {max_rho} discloses at {} traces",
        CALIBRATION_GRID[0]
    )))
}

/// Stable 64-bit FNV-1a, used to derive per-scenario seeds.
pub fn fnv1a(text: &str) -> u64 {
    text.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ b as u64).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Bytes available to unprivileged writers on the filesystem holding `dir`.
pub fn available_disk(dir: &Path) -> std::io::Result<u64> {
    use std::ffi::CString;
    use std::os::unix::ffi::OsStrExt;
    let mut probe = dir.to_path_buf();
    while !probe.exists() {
        if !probe.pop() {
            probe = PathBuf::from(".");
            break;
        }
    }
    if probe.as_os_str().is_empty() {
        probe = PathBuf::from(".");
    }
    let c = CString::new(probe.as_os_str().as_bytes())
        .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidInput, e))?;
    let mut st: libc::statvfs = unsafe { std::mem::zeroed() };
    // SAFETY: `c` is a valid NUL-terminated path and `st` is a properly sized out-parameter.
    let rc = unsafe { libc::statvfs(c.as_ptr(), &mut st) };
    if rc != 0 {
        return Err(std::io::Error::last_os_error());
    }
    Ok(st.f_bavail as u64 * st.f_frsize as u64)
}

#[derive(Debug, Clone)]
pub struct SuiteOptions {
    pub scale: f64,
    pub seed: u64,
    pub out_dir: PathBuf,
    pub synth: SynthConfig,
    pub include_hpf: bool,
    /// Restricts the run to these scenario ids; empty runs all of them.
    pub only: Vec<String>,
    pub target_rho: f64,
}

impl SuiteOptions {
    pub fn new(scale: f64, seed: u64, out_dir: impl Into<PathBuf>) -> Self {
        Self {
            scale,
            seed,
            out_dir: out_dir.into(),
            synth: SynthConfig::default(),
            include_hpf: true,
            only: Vec::new(),
            target_rho: 0.45,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub calibration: Calibration,
    pub rows: Vec<ReportRow>,
    pub scale: f64,
    pub n_attack_traces: usize,
    pub n_profiling_per_class: usize,
}

/// Plans for every configured scenario at `options.scale`, sharing one synthesis config.
pub fn suite_plans(options: &SuiteOptions, synth: &SynthConfig) -> Result<Vec<ExperimentPlan>, RunnerError> {
    if !(options.scale > 0.0 && options.scale <= 1.0) {
        return Err(RunnerError::Validation(format!(
            "scale must be in (0, 1], got {}",
            options.scale
        )));
    }
    let n_attack = ((FULL_ATTACK_TRACES as f64 * options.scale).round() as usize).max(1);
    let per_class = ((FULL_PROFILING_PER_CLASS as f64 * options.scale).round() as usize).max(2);
    let mut plans = Vec::new();
    for (id, _) in SCENARIOS {
        if !options.only.is_empty() && !options.only.iter().any(|o| o == id) {
            continue;
        }
        let scenario = builtin(id).ok_or(ScenarioError::MissingId)?;
        let mut plan = ExperimentPlan::new(scenario, n_attack, per_class);
        let h = fnv1a(id);
        plan.synth = synth.clone();
        plan.synth_seed = options.seed ^ h;
        plan.attack_seed = options.seed.rotate_left(17) ^ h.rotate_left(31);
        plan.include_hpf = options.include_hpf;
        plan.out_dir = Some(options.out_dir.clone());
        plans.push(plan);
    }
    Ok(plans)
}

/// Bytes of trace files the suite writes at `options.scale`.
pub fn suite_disk_bytes(options: &SuiteOptions) -> Result<u64, RunnerError> {
    Ok(suite_plans(options, &options.synth)?
        .iter()
        .map(ExperimentPlan::disk_bytes)
        .sum())
}

/// Fails unless the filesystem holding `dir` has `needed` bytes free.
pub fn ensure_capacity(needed: u64, dir: &Path) -> Result<(), RunnerError> {
    let available = available_disk(dir)?;
    if needed > available {
        return Err(RunnerError::InsufficientDisk {
            dir: dir.to_path_buf(),
            needed,
            available,
        });
    }
    Ok(())
}

/// Calibrates the noise, then runs every scenario and writes the report files.
pub fn run_suite(options: &SuiteOptions) -> Result<SuiteReport, RunnerError> {
    let probe = suite_plans(options, &options.synth)?;
    ensure_capacity(suite_disk_bytes(options)?, &options.out_dir)?;
    std::fs::create_dir_all(&options.out_dir)?;

    let calibration = calibrate_noise(&options.synth, options.target_rho, 0.6, options.seed)?;
    let mut synth = options.synth.clone();
    synth.model.noise_sigma = calibration.sigma;
    let plans = suite_plans(options, &synth)?;
    let mut rows = Vec::new();
    for plan in &plans {
        match run_plan(plan) {
            Ok(r) => rows.extend(r),
            Err(e) => {
                for &agg in &plan.aggregation_levels {
                    let mut row = ReportRow::empty(&plan.scenario.id, agg);
                    row.error = Some(e.to_string());
                    rows.push(row);
                }
            }
        }
    }
    let report = SuiteReport {
        calibration,
        rows,
        scale: options.scale,
        n_attack_traces: probe.first().map_or(0, |p| p.n_attack_traces),
        n_profiling_per_class: probe.first().map_or(0, |p| p.n_profiling_per_class),
    };
    std::fs::write(options.out_dir.join("report.csv"), report_csv(&report.rows))?;
    std::fs::write(options.out_dir.join("report.txt"), report_text(&report))?;
    Ok(report)
}

fn fmt_rho(v: Option<f64>) -> String {
    v.map_or("-".into(), |r| format!("{r:.3}"))
}

fn fmt_cpa(v: Option<Option<usize>>, fail: &str) -> String {
    match v {
        None => "-".into(),
        Some(None) => fail.into(),
        Some(Some(n)) if n >= 1000 && n % 1000 == 0 => format!("{}k", n / 1000),
        Some(Some(n)) => n.to_string(),
    }
}

fn fmt_ta(v: Option<bool>, ok: &str, fail: &str) -> String {
    match v {
        None => "-".into(),
        Some(true) => ok.into(),
        Some(false) => fail.into(),
    }
}

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from("scenario,aggregate,rho_raw,rho_hpf,cpa_raw,cpa_hpf,ta_raw,ta_hpf,error\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.scenario,
            r.aggregate,
            fmt_rho(r.rho_raw),
            fmt_rho(r.rho_hpf),
            fmt_cpa(r.cpa_raw, "x"),
            fmt_cpa(r.cpa_hpf, "x"),
            fmt_ta(r.ta_raw, "ok", "x"),
            fmt_ta(r.ta_hpf, "ok", "x"),
            r.error.as_deref().unwrap_or("").replace([',', '\n'], ";"),
        );
    }
    out
}

pub fn report_text(report: &SuiteReport) -> String {
    let mut out = String::new();
    let c = &report.calibration;
    let _ = writeln!(
        out,
        "scale {}  attack traces {}  profiling traces/class {}",
        report.scale, report.n_attack_traces, report.n_profiling_per_class
    );
    let _ = writeln!(
        out,
        "calibrated noise sigma {:.4} (Synch rho {:.3}, disclosure {})",
        c.sigma,
        c.rho,
        fmt_cpa(Some(c.disclosure), "✗")
    );
    out.push('\n');
    out.push_str(&rows_table(&report.rows));
    out
}

/// Fixed-width table of rows with check marks.
pub fn rows_table(rows: &[ReportRow]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<8} {:>6} | {:>6} {:>6} | {:>6} {:>6} | {:>3} {:>3}",
        "ID", "agg", "rho", "rho", "CPA", "CPA", "TA", "TA"
    );
    let _ = writeln!(
        out,
        "{:<8} {:>6} | {:>6} {:>6} | {:>6} {:>6} | {:>3} {:>3}",
        "", "", "raw", "hpf", "raw", "hpf", "raw", "hpf"
    );
    out.push_str(&"-".repeat(60));
    out.push('\n');
    for r in rows {
        let _ = write!(
            out,
            "{:<8} {:>6} | {:>6} {:>6} | {:>6} {:>6} | {:>3} {:>3}",
            r.scenario,
            r.aggregate,
            fmt_rho(r.rho_raw),
            fmt_rho(r.rho_hpf),
            fmt_cpa(r.cpa_raw, "✗"),
            fmt_cpa(r.cpa_hpf, "✗"),
            fmt_ta(r.ta_raw, "✓", "✗"),
            fmt_ta(r.ta_hpf, "✓", "✗"),
        );
        if let Some(e) = &r.error {
            let _ = write!(out, "  error: {e}");
        }
        out.push('\n');
    }
    out
}
