use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use desync_bench::attack::{
    build_templates, cpa_bytes, default_grid, template_attack, DEFAULT_POI_COUNT,
};
use desync_bench::dsp::{aggregate_set, high_pass_set, FilterSpec};
use desync_bench::format::{read_from_path, write_to_path};
use desync_bench::leakage::{synthesize_profiling_set, synthesize_set, SynthConfig};
use desync_bench::mmcm::{build_config_table, default_input_clock, ConfigTable};
use desync_bench::rdvfs::build_timeline;
use desync_bench::runner::{
    correlation_csv, report_text, run_suite, SuiteOptions, DEFAULT_GE_REPETITIONS,
    DEFAULT_KEY, DEFAULT_SCALE,
};
use desync_bench::scenario::{builtin, parse_scenario, ScenarioSpec};
use desync_bench::Error;

#[derive(Parser)]
#[command(name = "desync-bench", version, about = "Random DVFS trace synthesis and side-channel attacks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every built-in scenario and write report.csv / report.txt.
    Suite {
        #[arg(long, default_value_t = DEFAULT_SCALE)]
        scale: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[arg(long, env = "DESYNC_BENCH_OUT", default_value = "desync-out")]
        out: PathBuf,
        /// Only run these scenario ids.
        #[arg(long, value_delimiter = ',')]
        only: Vec<String>,
        #[arg(long)]
        no_hpf: bool,
    },
    /// Synthesize a trace set.
    Synth(SynthArgs),
    /// High-pass filter and/or aggregate a trace set.
    Post {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
        #[arg(long)]
        hpf: bool,
        #[arg(long, default_value_t = 125e3)]
        cutoff_hz: f64,
        #[arg(long, default_value_t = 4)]
        order: usize,
        #[arg(long, default_value_t = 1)]
        aggregate: usize,
    },
    /// Correlation attack; one JSON line per byte and trace count.
    Cpa {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_delimiter = ',')]
        bytes: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        grid: Vec<usize>,
        /// Write correct-key correlation curves here.
        #[arg(long)]
        curves: Option<PathBuf>,
    },
    /// Template attack; one JSON line per byte and trace count.
    Ta {
        #[arg(long)]
        profiling: PathBuf,
        #[arg(long)]
        attack: PathBuf,
        #[arg(long, value_delimiter = ',')]
        bytes: Vec<usize>,
        #[arg(long, value_delimiter = ',')]
        grid: Vec<usize>,
        #[arg(long, default_value_t = DEFAULT_GE_REPETITIONS)]
        repetitions: usize,
        #[arg(long, default_value_t = DEFAULT_POI_COUNT)]
        pois: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Print the operating-point schedule of one actuator run as CSV.
    Timeline {
        /// Built-in id or scenario file.
        #[arg(long)]
        scenario: String,
        #[arg(long, default_value_t = 1000.0)]
        duration_us: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Also sample the regulator output at this rate.
        #[arg(long)]
        voltage_rate_hz: Option<f64>,
    },
    /// Clock configuration tables.
    Table {
        #[command(subcommand)]
        command: TableCommand,
    },
}

#[derive(Subcommand)]
enum TableCommand {
    /// Export the divider table of a scenario or frequency range.
    Export {
        #[arg(long, conflicts_with = "range")]
        scenario: Option<String>,
        /// `lo,hi,step` in MHz.
        #[arg(long, value_delimiter = ',')]
        range: Vec<f64>,
        #[arg(long, value_enum, default_value_t = TableFormat::Csv)]
        format: TableFormat,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum TableFormat {
    Csv,
    Mem,
}

#[derive(Args)]
struct SynthArgs {
    /// Built-in id or scenario file.
    #[arg(long)]
    scenario: String,
    #[arg(long, default_value_t = 1000)]
    n: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// 32 hex digits.
    #[arg(long)]
    key: Option<String>,
    #[arg(long)]
    out: PathBuf,
    /// Build a balanced profiling set with this many traces per class instead.
    #[arg(long)]
    per_class: Option<usize>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    beta: Option<f64>,
    #[arg(long)]
    trigger_delay_us: Option<f64>,
    #[arg(long)]
    samples: Option<usize>,
}

fn load_scenario(arg: &str) -> Result<ScenarioSpec, Error> {
    if let Some(s) = builtin(arg) {
        return Ok(s);
    }
    Ok(parse_scenario(&std::fs::read_to_string(arg)?)?)
}

fn parse_key(text: &str) -> Result<[u8; 16], String> {
    let t = text.trim();
    if t.len() != 32 || !t.is_ascii() {
        return Err(format!("key must be 32 hex digits, got {text:?}"));
    }
    let mut key = [0u8; 16];
    for (i, k) in key.iter_mut().enumerate() {
        *k = u8::from_str_radix(&t[2 * i..2 * i + 2], 16).map_err(|e| format!("bad key: {e}"))?;
    }
    Ok(key)
}

fn bytes_or_all(bytes: Vec<usize>) -> Vec<usize> {
    if bytes.is_empty() {
        (0..16).collect()
    } else {
        bytes
    }
}

fn run(cli: Cli) -> Result<(), Box<dyn std::error::Error>> {
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    match cli.command {
        Command::Suite {
            scale,
            seed,
            out: dir,
            only,
            no_hpf,
        } => {
            let mut opts = SuiteOptions::new(scale, seed, dir.clone());
            opts.only = only;
            opts.include_hpf = !no_hpf;
            let report = run_suite(&opts)?;
            write!(out, "{}", report_text(&report))?;
            writeln!(out, "\nwrote {}", dir.join("report.csv").display())?;
        }
        Command::Synth(a) => {
            let scenario = load_scenario(&a.scenario)?;
            let key = a.key.as_deref().map(parse_key).transpose()?.unwrap_or(DEFAULT_KEY);
            let mut cfg = SynthConfig::default();
            if let Some(v) = a.sigma {
                cfg.model.noise_sigma = v;
            }
            if let Some(v) = a.alpha {
                cfg.model.alpha = v;
            }
            if let Some(v) = a.beta {
                cfg.model.beta = v;
            }
            if let Some(v) = a.trigger_delay_us {
                cfg.model.trigger_delay_us = v;
            }
            cfg.n_samples = a.samples;
            let set = match a.per_class {
                Some(k) => synthesize_profiling_set(k, key, &scenario, &cfg, a.seed)?,
                None => synthesize_set(a.n, key, &scenario, &cfg, a.seed)?,
            };
            let bytes = write_to_path(&set, &a.out)?;
            writeln!(
                out,
                "{} traces x {} samples ({} bytes) -> {}",
                set.n_traces(),
                set.n_samples(),
                bytes,
                a.out.display()
            )?;
        }
        Command::Post {
            input,
            output,
            hpf,
            cutoff_hz,
            order,
            aggregate,
        } => {
            let mut set = read_from_path(&input)?;
            if hpf {
                set = high_pass_set(&set, &FilterSpec { cutoff_hz, order })?;
            }
            set = aggregate_set(&set, aggregate)?;
            write_to_path(&set, &output)?;
        }
        Command::Cpa {
            input,
            bytes,
            grid,
            curves,
        } => {
            let set = read_from_path(&input)?;
            let grid = if grid.is_empty() { default_grid(set.n_traces()) } else { grid };
            let results = cpa_bytes(&set, &bytes_or_all(bytes), &grid)?;
            for r in &results {
                for p in &r.rank_curve {
                    let line = serde_json::json!({
                        "byte": r.byte_idx, "n_traces": p.n_traces, "rank": p.rank, "rho": p.rho,
                    });
                    writeln!(out, "{line}")?;
                }
            }
            if let Some(path) = curves {
                std::fs::write(path, correlation_csv(&results, &set.key))?;
            }
        }
        Command::Ta {
            profiling,
            attack,
            bytes,
            grid,
            repetitions,
            pois,
            seed,
        } => {
            let prof = read_from_path(&profiling)?;
            let set = read_from_path(&attack)?;
            let grid = if grid.is_empty() { default_grid(set.n_traces()) } else { grid };
            for b in bytes_or_all(bytes) {
                let templates = build_templates(&prof, b, pois)?;
                let ge = template_attack(&templates, &set, b, repetitions, &grid, seed)?;
                for (n, g) in ge.grid.iter().zip(&ge.ge) {
                    let line = serde_json::json!({ "byte": b, "n_traces": n, "ge": g });
                    writeln!(out, "{line}")?;
                }
            }
        }
        Command::Timeline {
            scenario,
            duration_us,
            seed,
            voltage_rate_hz,
        } => {
            let scenario = load_scenario(&scenario)?;
            let cfg = SynthConfig::default();
            let table = ConfigTable::from_frequencies(&scenario.frequency_values, cfg.f_in)?;
            let (timeline, wave) = build_timeline(&scenario, duration_us, seed, &table, &cfg.sim)?;
            writeln!(out, "start_us,freq_mhz,phase_deg,voltage_v")?;
            for s in timeline.segments() {
                writeln!(
                    out,
                    "{},{},{},{}",
                    s.start_us,
                    s.point.frequency_mhz(),
                    s.point.phase_deg,
                    s.point.voltage_v
                )?;
            }
            if let Some(rate) = voltage_rate_hz {
                writeln!(out, "\nt_us,voltage_v")?;
                for (i, v) in wave.sample(rate, duration_us).iter().enumerate() {
                    writeln!(out, "{},{v:.6}", i as f64 * 1e6 / rate)?;
                }
            }
        }
        Command::Table {
            command:
                TableCommand::Export {
                    scenario,
                    range,
                    format,
                    out: path,
                },
        } => {
            let table = match (scenario, range.as_slice()) {
                (Some(s), _) => {
                    let s = load_scenario(&s)?;
                    ConfigTable::from_frequencies(&s.frequency_values, default_input_clock())?
                }
                (None, [lo, hi, step]) => build_config_table(*lo, *hi, *step, default_input_clock())?,
                _ => return Err("give --scenario or --range lo,hi,step".into()),
            };
            let text = match format {
                TableFormat::Csv => table.to_csv(),
                TableFormat::Mem => table.to_mem_init(),
            };
            match path {
                Some(p) => std::fs::write(p, text)?,
                None => write!(out, "{text}")?,
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
