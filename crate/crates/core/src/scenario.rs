//! Scenario configuration files.
//!
//! One `key = value` per line, `#` starts a comment. Value lists are either a
//! range `[lo;hi] step s` (inclusive of both ends), an explicit set
//! `{a, b, c}` or a single scalar.
//!
//! ```text
//! id = F3
//! voltage = 1
//! frequency = [25;75] step 10.0
//! phase = 0
//! chip_train = artix7-100
//! chip_attack = artix7-100
//! enables = f
//! ```

use std::collections::HashSet;

use crate::leakage::ChipProfile;
use crate::trace::{
    ControlEnables, Frequency, OperatingPoint, MAX_FREQUENCY_MHZ, MAX_VOLTAGE_V,
    MIN_FREQUENCY_MHZ, MIN_VOLTAGE_V,
};

pub const MAX_FREQUENCY_VALUES: usize = 1024;
pub const MAX_VOLTAGE_VALUES: usize = 128;
/// Native phase configurations per actuation; longer lists are reached by
/// serializing fine steps.
pub const NATIVE_PHASE_CONFIGS: usize = 8;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ScenarioError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: key `{key}` given twice")]
    DuplicateKey { line: usize, key: String },
    #[error("missing `id`")]
    MissingId,
    #[error("{key} value {value} outside [{lo}, {hi}]")]
    OutOfBounds {
        key: &'static str,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("frequency {0} MHz is not a multiple of 0.125 MHz")]
    OffGrid(f64),
    #[error("{key} lists {count} values, cap is {cap}")]
    TooMany {
        key: &'static str,
        count: usize,
        cap: usize,
    },
    #[error("unknown chip profile `{0}`")]
    UnknownChip(String),
}

/// A fully expanded experimental configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioSpec {
    pub id: String,
    pub voltage_values: Vec<f64>,
    pub frequency_values: Vec<Frequency>,
    pub phase_values: Vec<f64>,
    pub chip_train: ChipProfile,
    pub chip_attack: ChipProfile,
    pub enables: ControlEnables,
}

impl ScenarioSpec {
    /// The operating point used before any random draw: first entry of each list.
    pub fn default_point(&self) -> OperatingPoint {
        OperatingPoint::new(
            self.frequency_values[0],
            self.phase_values[0],
            self.voltage_values[0],
        )
    }

    pub fn min_frequency(&self) -> Frequency {
        *self.frequency_values.iter().min().expect("non-empty")
    }

    /// Same scenario with the roles of the two chips swapped.
    pub fn with_chips(mut self, train: ChipProfile, attack: ChipProfile) -> Self {
        self.chip_train = train;
        self.chip_attack = attack;
        self
    }
}

/// Expands `[lo;hi] step s` into `{lo, lo+s, ...}` while the value stays `<= hi`.
pub fn expand_range(lo: f64, hi: f64, step: f64) -> Vec<f64> {
    if hi < lo || step <= 0.0 {
        return if hi == lo { vec![lo] } else { Vec::new() };
    }
    let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    (0..count).map(|i| lo + i as f64 * step).collect()
}

fn parse_number(text: &str, line: usize) -> Result<f64, ScenarioError> {
    text.trim().parse::<f64>().map_err(|_| ScenarioError::Syntax {
        line,
        msg: format!("`{}` is not a number", text.trim()),
    })
}

fn parse_values(text: &str, line: usize) -> Result<Vec<f64>, ScenarioError> {
    let text = text.trim();
    if let Some(rest) = text.strip_prefix('[') {
        let (bounds, tail) = rest.split_once(']').ok_or_else(|| ScenarioError::Syntax {
            line,
            msg: "unterminated range".into(),
        })?;
        let (lo, hi) = bounds.split_once(';').ok_or_else(|| ScenarioError::Syntax {
            line,
            msg: "range needs `lo;hi`".into(),
        })?;
        let step = tail
            .trim()
            .strip_prefix("step")
            .ok_or_else(|| ScenarioError::Syntax {
                line,
                msg: "range needs `step s`".into(),
            })?;
        let (lo, hi, step) = (
            parse_number(lo, line)?,
            parse_number(hi, line)?,
            parse_number(step, line)?,
        );
        if step <= 0.0 || hi < lo {
            return Err(ScenarioError::Syntax {
                line,
                msg: "range needs lo <= hi and a positive step".into(),
            });
        }
        Ok(expand_range(lo, hi, step))
    } else if let Some(rest) = text.strip_prefix('{') {
        let body = rest.strip_suffix('}').ok_or_else(|| ScenarioError::Syntax {
            line,
            msg: "unterminated set".into(),
        })?;
        let values = body
            .split(',')
            .map(|v| parse_number(v, line))
            .collect::<Result<Vec<_>, _>>()?;
        if values.is_empty() {
            return Err(ScenarioError::Syntax {
                line,
                msg: "empty set".into(),
            });
        }
        Ok(values)
    } else {
        Ok(vec![parse_number(text, line)?])
    }
}

fn parse_chip(text: &str, line: usize) -> Result<ChipProfile, ScenarioError> {
    let mut parts = text.split_whitespace();
    let name = parts.next().ok_or_else(|| ScenarioError::Syntax {
        line,
        msg: "empty chip reference".into(),
    })?;
    let rest: Vec<&str> = parts.collect();
    match rest.as_slice() {
        [] => ChipProfile::builtin(name).ok_or_else(|| ScenarioError::UnknownChip(name.into())),
        [gain, offset] => {
            let gain = parse_number(gain, line)?;
            if gain <= 0.0 {
                return Err(ScenarioError::Syntax {
                    line,
                    msg: "chip gain must be positive".into(),
                });
            }
            Ok(ChipProfile::new(name, gain, parse_number(offset, line)?))
        }
        _ => Err(ScenarioError::Syntax {
            line,
            msg: "chip reference is `name` or `name gain offset`".into(),
        }),
    }
}

fn parse_enables(text: &str, line: usize) -> Result<ControlEnables, ScenarioError> {
    let mut en = ControlEnables::NONE;
    if text.trim() == "none" {
        return Ok(en);
    }
    for part in text.split(',') {
        match part.trim() {
            "f" => en.f_en = true,
            "p" => en.p_en = true,
            "v" => en.v_en = true,
            other => {
                return Err(ScenarioError::Syntax {
                    line,
                    msg: format!("unknown enable `{other}` (use f, p, v or none)"),
                })
            }
        }
    }
    Ok(en)
}

fn check_bounds(key: &'static str, values: &[f64], lo: f64, hi: f64) -> Result<(), ScenarioError> {
    for &value in values {
        if !(lo..=hi).contains(&value) {
            return Err(ScenarioError::OutOfBounds { key, value, lo, hi });
        }
    }
    Ok(())
}

/// Parses and validates a scenario document.
pub fn parse_scenario(text: &str) -> Result<ScenarioSpec, ScenarioError> {
    let mut seen = HashSet::new();
    let mut id = None;
    let mut voltage = vec![1.0];
    let mut frequency = vec![50.0];
    let mut phase = vec![0.0];
    let mut chip_train = None;
    let mut chip_attack = None;
    let mut enables = None;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap().trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content.split_once('=').ok_or_else(|| ScenarioError::Syntax {
            line,
            msg: "expected `key = value`".into(),
        })?;
        let key = key.trim();
        let value = value.trim();
        if !seen.insert(key.to_owned()) {
            return Err(ScenarioError::DuplicateKey {
                line,
                key: key.into(),
            });
        }
        match key {
            "id" => id = Some(value.to_owned()),
            "voltage" => voltage = parse_values(value, line)?,
            "frequency" => frequency = parse_values(value, line)?,
            "phase" => phase = parse_values(value, line)?,
            "chip_train" => chip_train = Some(parse_chip(value, line)?),
            "chip_attack" => chip_attack = Some(parse_chip(value, line)?),
            "enables" => enables = Some(parse_enables(value, line)?),
            _ => {
                return Err(ScenarioError::UnknownKey {
                    line,
                    key: key.into(),
                })
            }
        }
    }

    let id = id.filter(|s| !s.is_empty()).ok_or(ScenarioError::MissingId)?;

    // Snap to the value grains so accumulated range steps compare exactly.
    let voltage: Vec<f64> = voltage.iter().map(|v| (v * 100.0).round() / 100.0).collect();
    let phase: Vec<f64> = phase.iter().map(|p| (p * 1e6).round() / 1e6).collect();

    check_bounds("voltage", &voltage, MIN_VOLTAGE_V, MAX_VOLTAGE_V)?;
    check_bounds("frequency", &frequency, MIN_FREQUENCY_MHZ, MAX_FREQUENCY_MHZ)?;
    for &p in &phase {
        if !(0.0..360.0).contains(&p) {
            return Err(ScenarioError::OutOfBounds {
                key: "phase",
                value: p,
                lo: 0.0,
                hi: 360.0,
            });
        }
    }
    if frequency.len() > MAX_FREQUENCY_VALUES {
        return Err(ScenarioError::TooMany {
            key: "frequency",
            count: frequency.len(),
            cap: MAX_FREQUENCY_VALUES,
        });
    }
    if voltage.len() > MAX_VOLTAGE_VALUES {
        return Err(ScenarioError::TooMany {
            key: "voltage",
            count: voltage.len(),
            cap: MAX_VOLTAGE_VALUES,
        });
    }
    let frequency_values = frequency
        .iter()
        .map(|&f| {
            // Range accumulation can leave ~1e-14 of drift; snap within a tight tolerance.
            let snapped = (f * 8.0).round() / 8.0;
            if (snapped - f).abs() > 1e-6 {
                Err(ScenarioError::OffGrid(f))
            } else {
                Ok(Frequency::from_mhz(snapped).expect("snapped to grid"))
            }
        })
        .collect::<Result<Vec<_>, _>>()?;

    let enables = enables.unwrap_or(ControlEnables {
        f_en: frequency_values.len() > 1,
        p_en: phase.len() > 1,
        v_en: voltage.len() > 1,
    });
    let chip_train = chip_train.unwrap_or_else(ChipProfile::artix7_100);
    let chip_attack = chip_attack.unwrap_or_else(|| chip_train.clone());

    Ok(ScenarioSpec {
        id,
        voltage_values: voltage,
        frequency_values,
        phase_values: phase,
        chip_train,
        chip_attack,
        enables,
    })
}

/// Scenario files shipped with the crate, in report order.
pub const SCENARIOS: &[(&str, &str)] = &[
    ("Synch", include_str!("../scenarios/synch.scn")),
    ("C1", include_str!("../scenarios/c1.scn")),
    ("C2", include_str!("../scenarios/c2.scn")),
    ("V1", include_str!("../scenarios/v1.scn")),
    ("V2", include_str!("../scenarios/v2.scn")),
    ("V3", include_str!("../scenarios/v3.scn")),
    ("P1", include_str!("../scenarios/p1.scn")),
    ("F1", include_str!("../scenarios/f1.scn")),
    ("F2", include_str!("../scenarios/f2.scn")),
    ("F3", include_str!("../scenarios/f3.scn")),
    ("F3_125", include_str!("../scenarios/f3_125.scn")),
];

/// Variants of F1/F2 whose explicit lists match the documented step counts (9 and 7).
pub const STEP_COUNT_VARIANTS: &[(&str, &str)] = &[
    ("F1_9", include_str!("../scenarios/f1_9.scn")),
    ("F2_7", include_str!("../scenarios/f2_7.scn")),
];

/// Looks up a shipped scenario by id (case-insensitive).
pub fn builtin(id: &str) -> Option<ScenarioSpec> {
    SCENARIOS
        .iter()
        .chain(STEP_COUNT_VARIANTS)
        .find(|(name, _)| name.eq_ignore_ascii_case(id))
        .map(|(_, text)| parse_scenario(text).expect("shipped scenario parses"))
}
