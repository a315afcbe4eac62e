//! Random DVFS desynchronization simulator and side-channel attack workbench.
//!
//! The crate models a clock/voltage actuator that hops between random
//! operating points, synthesizes AES-128 power traces captured under it, and
//! runs correlation and template attacks on the result:
//!
//! * [`trace`] and [`format`]: operating points, trace sets, the DSB1 container,
//! * [`scenario`]: scenario files and the built-in experiment configurations,
//! * [`mmcm`]: clock tile divider search and the two-level configuration table,
//! * [`rdvfs`]: the actuator state machines and timeline builder,
//! * [`leakage`]: the power model and trace synthesis,
//! * [`dsp`]: high-pass filtering and aggregation,
//! * [`attack`]: CPA, templates, guessing entropy,
//! * [`runner`]: experiment plans and the summary report.

pub mod attack;
pub mod dsp;
pub mod format;
pub mod leakage;
pub mod mmcm;
pub mod rdvfs;
pub mod runner;
pub mod scenario;
pub mod trace;

pub use attack::{cpa_attack, rho_metric, template_attack, traces_to_disclosure};
pub use leakage::{ChipProfile, LeakageModel, SynthConfig};
pub use scenario::{builtin, parse_scenario, ScenarioSpec};
pub use trace::{Frequency, OperatingPoint, OperatingTimeline, TraceSet};

/// Any error the crate can produce.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Format(#[from] format::FormatError),
    #[error(transparent)]
    Scenario(#[from] scenario::ScenarioError),
    #[error(transparent)]
    Mmcm(#[from] mmcm::MmcmError),
    #[error(transparent)]
    Sim(#[from] rdvfs::SimError),
    #[error(transparent)]
    Leakage(#[from] leakage::LeakageError),
    #[error(transparent)]
    Dsp(#[from] dsp::DspError),
    #[error(transparent)]
    Attack(#[from] attack::AttackError),
    #[error(transparent)]
    Runner(#[from] runner::RunnerError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
