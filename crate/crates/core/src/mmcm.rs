//! Clock-management tile arithmetic: divider settings, feasibility search and
//! the two-level configuration memory used by the frequency actuator.
//!
//! All arithmetic on the search path is exact. Multipliers and output dividers
//! are carried in eighths, so the realized frequency is the rational
//! `f_in * m / (d * o) = f_in8 * m8 / (8 * d * o8)` MHz.

use std::fmt::Write as _;

use crate::trace::Frequency;

pub const M_EIGHTHS_MIN: u16 = 16; // 2.0
pub const M_EIGHTHS_MAX: u16 = 512; // 64.0
pub const D_MIN: u8 = 1;
pub const D_MAX: u8 = 106;
pub const O_INT_MIN: u8 = 1;
pub const O_INT_MAX: u8 = 128;
pub const VCO_MIN_MHZ: u32 = 600;
pub const VCO_MAX_MHZ: u32 = 1200;
/// Half of the 0.125 MHz grid step.
pub const SOLVE_TOLERANCE_MHZ: f64 = 0.0625;
/// Lines available in the configuration memory.
pub const TABLE_CAPACITY: usize = 1024;

pub fn default_input_clock() -> Frequency {
    Frequency::from_eighths(800)
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MmcmError {
    #[error("multiplier {0} is not a multiple of 0.125 in [2, 64]")]
    BadMultiplier(f64),
    #[error("divider d={0} outside [1, 106]")]
    BadDivider(u8),
    #[error("output divider {o_int}+{o_frac}/8 invalid (o_int in [1,128], o_frac in [0,7], o_frac_en={o_frac_en})")]
    BadOutputDivider { o_int: u8, o_frac: u8, o_frac_en: bool },
    #[error("VCO {vco_mhz} MHz outside [600, 1200]")]
    VcoOutOfRange { vco_mhz: f64 },
    #[error("target {0} MHz outside [5, 800]")]
    OutOfEnvelope(f64),
    #[error("no configuration reaches {target_mhz} MHz within 0.0625 MHz (best error {best_error_mhz} MHz)")]
    Infeasible {
        target_mhz: f64,
        best_error_mhz: f64,
    },
    #[error("{0} frequencies exceed the 1024-line configuration memory")]
    TableOverflow(usize),
    #[error("invalid table range: {0}")]
    BadRange(String),
    #[error("{0} MHz is not stored in the configuration table")]
    NotFound(f64),
}

/// Divider settings of one clock tile.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MmcmConfig {
    m_eighths: u16,
    d: u8,
    o_int: u8,
    o_frac: u8,
    o_frac_en: bool,
}

impl MmcmConfig {
    pub fn new(m: f64, d: u8, o_int: u8, o_frac: u8, o_frac_en: bool) -> Result<Self, MmcmError> {
        let m8 = (m * 8.0).round();
        if (m8 / 8.0 - m).abs() > 1e-12
            || !(M_EIGHTHS_MIN as f64..=M_EIGHTHS_MAX as f64).contains(&m8)
        {
            return Err(MmcmError::BadMultiplier(m));
        }
        Self::from_raw(m8 as u16, d, o_int, o_frac, o_frac_en)
    }

    pub fn from_raw(
        m_eighths: u16,
        d: u8,
        o_int: u8,
        o_frac: u8,
        o_frac_en: bool,
    ) -> Result<Self, MmcmError> {
        if !(M_EIGHTHS_MIN..=M_EIGHTHS_MAX).contains(&m_eighths) {
            return Err(MmcmError::BadMultiplier(m_eighths as f64 / 8.0));
        }
        if !(D_MIN..=D_MAX).contains(&d) {
            return Err(MmcmError::BadDivider(d));
        }
        if !(O_INT_MIN..=O_INT_MAX).contains(&o_int) || o_frac > 7 || (!o_frac_en && o_frac != 0)
        {
            return Err(MmcmError::BadOutputDivider {
                o_int,
                o_frac,
                o_frac_en,
            });
        }
        Ok(Self {
            m_eighths,
            d,
            o_int,
            o_frac,
            o_frac_en,
        })
    }

    pub fn m(&self) -> f64 {
        self.m_eighths as f64 / 8.0
    }
    pub fn m_eighths(&self) -> u16 {
        self.m_eighths
    }
    pub fn d(&self) -> u8 {
        self.d
    }
    pub fn o_int(&self) -> u8 {
        self.o_int
    }
    pub fn o_frac(&self) -> u8 {
        self.o_frac
    }
    pub fn o_frac_en(&self) -> bool {
        self.o_frac_en
    }

    /// Output divider in eighths.
    pub fn o_eighths(&self) -> u32 {
        8 * self.o_int as u32 + self.o_frac as u32
    }

    pub fn vco_mhz(&self, f_in_mhz: f64) -> f64 {
        f_in_mhz * self.m() / self.d as f64
    }

    /// Checks the VCO window for a given input clock.
    pub fn check_vco(&self, f_in_mhz: f64) -> Result<(), MmcmError> {
        let vco = self.vco_mhz(f_in_mhz);
        if (VCO_MIN_MHZ as f64..=VCO_MAX_MHZ as f64).contains(&vco) {
            Ok(())
        } else {
            Err(MmcmError::VcoOutOfRange { vco_mhz: vco })
        }
    }
}

/// `f_in * m / (d * (o_int + o_frac/8))`.
pub fn mmcm_output_frequency(cfg: &MmcmConfig, f_in_mhz: f64) -> f64 {
    f_in_mhz * cfg.m() / (cfg.d as f64 * (cfg.o_int as f64 + cfg.o_frac as f64 / 8.0))
}

/// Candidate during the search, with its error kept as the exact fraction `num / den` MHz.
#[derive(Clone, Copy)]
struct Candidate {
    m8: u16,
    d: u8,
    o8: u32,
    err_num: u128,
    err_den: u128,
}

impl Candidate {
    fn new(f_in8: u64, target8: u64, m8: u16, d: u8, o8: u32) -> Self {
        let lhs = f_in8 as i128 * m8 as i128;
        let rhs = target8 as i128 * d as i128 * o8 as i128;
        Self {
            m8,
            d,
            o8,
            err_num: (lhs - rhs).unsigned_abs(),
            err_den: 8 * d as u128 * o8 as u128,
        }
    }

    /// Orders by error, then by higher VCO, then by smaller `d`.
    fn better_than(&self, other: &Self) -> bool {
        let a = self.err_num * other.err_den;
        let b = other.err_num * self.err_den;
        if a != b {
            return a < b;
        }
        // VCO is proportional to m8 / d.
        let va = self.m8 as u128 * other.d as u128;
        let vb = other.m8 as u128 * self.d as u128;
        if va != vb {
            return va > vb;
        }
        self.d < other.d
    }

    fn error_mhz(&self) -> f64 {
        self.err_num as f64 / self.err_den as f64
    }

    fn into_config(self) -> MmcmConfig {
        let o_int = (self.o8 / 8) as u8;
        let o_frac = (self.o8 % 8) as u8;
        MmcmConfig::from_raw(self.m8, self.d, o_int, o_frac, o_frac != 0)
            .expect("search only visits legal settings")
    }
}

/// Finds the divider settings closest to `target`, ties broken toward higher
/// VCO and then smaller `d`. Every legal `(m, d)` pair is visited; for each the
/// two output dividers bracketing the ideal ratio are the only candidates that
/// can minimize the error.
pub fn solve_mmcm(target: Frequency, f_in: Frequency) -> Result<MmcmConfig, MmcmError> {
    if !target.is_in_envelope() {
        return Err(MmcmError::OutOfEnvelope(target.mhz()));
    }
    let best = search(target, f_in).expect("at least one legal (m, d) pair exists");
    if 16 * best.err_num > best.err_den {
        return Err(MmcmError::Infeasible {
            target_mhz: target.mhz(),
            best_error_mhz: best.error_mhz(),
        });
    }
    Ok(best.into_config())
}

fn search(target: Frequency, f_in: Frequency) -> Option<Candidate> {
    let f_in8 = f_in.eighths() as u64;
    let t8 = target.eighths() as u64;
    let o8_min = 8 * O_INT_MIN as u32;
    let o8_max = 8 * O_INT_MAX as u32 + 7;
    let mut best: Option<Candidate> = None;
    for d in D_MIN..=D_MAX {
        for m8 in M_EIGHTHS_MIN..=M_EIGHTHS_MAX {
            // VCO = f_in8 * m8 / (64 d) MHz.
            let vco_scaled = f_in8 * m8 as u64;
            if vco_scaled < 64 * d as u64 * VCO_MIN_MHZ as u64
                || vco_scaled > 64 * d as u64 * VCO_MAX_MHZ as u64
            {
                continue;
            }
            // Ideal o8 = f_in8 * m8 / (t8 * d).
            let den = t8 * d as u64;
            let lo = (vco_scaled / den) as u32;
            for o8 in [lo, lo + 1] {
                let o8 = o8.clamp(o8_min, o8_max);
                let cand = Candidate::new(f_in8, t8, m8, d, o8);
                if best.as_ref().is_none_or(|b| cand.better_than(b)) {
                    best = Some(cand);
                }
            }
        }
    }
    best
}

/// One entry of the first-level index, addressed by integer MHz.
///
/// The configuration for `f` lives at line `base + (frac8(f) - first_frac) / shift`,
/// where `frac8` is the fractional part in eighths and `shift` is the spacing of
/// stored values in eighths. `count == 0` marks an integer MHz with no entries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct IndexRecord {
    pub base: u16,
    pub first_frac: u8,
    pub shift: u8,
    pub count: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConfigLine {
    pub target: Frequency,
    pub config: MmcmConfig,
}

/// Emulation of the block-RAM configuration memory.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigTable {
    f_in: Frequency,
    first_mhz: u32,
    index_records: Vec<IndexRecord>,
    config_lines: Vec<ConfigLine>,
}

/// Builds the table for `{lo, lo+step, ...} <= hi`.
pub fn build_config_table(
    f_lo_mhz: f64,
    f_hi_mhz: f64,
    step_mhz: f64,
    f_in: Frequency,
) -> Result<ConfigTable, MmcmError> {
    let lo = Frequency::from_mhz(f_lo_mhz)
        .ok_or_else(|| MmcmError::BadRange(format!("lower bound {f_lo_mhz} off grid")))?;
    let hi = Frequency::from_mhz(f_hi_mhz)
        .ok_or_else(|| MmcmError::BadRange(format!("upper bound {f_hi_mhz} off grid")))?;
    let step = Frequency::from_mhz(step_mhz)
        .filter(|s| s.eighths() > 0)
        .ok_or_else(|| MmcmError::BadRange(format!("step {step_mhz} off grid")))?;
    if hi < lo {
        return Err(MmcmError::BadRange(format!("{f_lo_mhz} > {f_hi_mhz}")));
    }
    for f in [lo, hi] {
        if !f.is_in_envelope() {
            return Err(MmcmError::OutOfEnvelope(f.mhz()));
        }
    }
    let count = ((hi.eighths() - lo.eighths()) / step.eighths()) as usize + 1;
    if count > TABLE_CAPACITY {
        return Err(MmcmError::TableOverflow(count));
    }
    let values: Vec<Frequency> = (0..count as u32)
        .map(|i| Frequency::from_eighths(lo.eighths() + i * step.eighths()))
        .collect();
    ConfigTable::from_frequencies(&values, f_in)
}

impl ConfigTable {
    /// Builds a table holding exactly `freqs` (sorted and deduplicated). Values
    /// sharing an integer MHz must be evenly spaced so one index record covers them.
    pub fn from_frequencies(freqs: &[Frequency], f_in: Frequency) -> Result<Self, MmcmError> {
        let mut values = freqs.to_vec();
        values.sort();
        values.dedup();
        if values.is_empty() {
            return Err(MmcmError::BadRange("no frequencies".into()));
        }
        if values.len() > TABLE_CAPACITY {
            return Err(MmcmError::TableOverflow(values.len()));
        }
        let config_lines = values
            .iter()
            .map(|&target| {
                solve_mmcm(target, f_in).map(|config| ConfigLine { target, config })
            })
            .collect::<Result<Vec<_>, _>>()?;

        let first_mhz = values[0].whole_mhz();
        let last_mhz = values[values.len() - 1].whole_mhz();
        let mut index_records = vec![IndexRecord::default(); (last_mhz - first_mhz + 1) as usize];
        let mut line = 0usize;
        while line < values.len() {
            let whole = values[line].whole_mhz();
            let group_end = values[line..]
                .iter()
                .position(|f| f.whole_mhz() != whole)
                .map_or(values.len(), |p| line + p);
            let group = &values[line..group_end];
            let shift = if group.len() > 1 {
                let s = group[1].frac_eighths() - group[0].frac_eighths();
                if group
                    .windows(2)
                    .any(|w| w[1].frac_eighths() - w[0].frac_eighths() != s)
                {
                    return Err(MmcmError::BadRange(format!(
                        "values within {whole} MHz are not evenly spaced"
                    )));
                }
                s as u8
            } else {
                8
            };
            index_records[(whole - first_mhz) as usize] = IndexRecord {
                base: line as u16,
                first_frac: group[0].frac_eighths() as u8,
                shift,
                count: group.len() as u8,
            };
            line = group_end;
        }
        Ok(Self {
            f_in,
            first_mhz,
            index_records,
            config_lines,
        })
    }

    pub fn f_in(&self) -> Frequency {
        self.f_in
    }

    pub fn len(&self) -> usize {
        self.config_lines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.config_lines.is_empty()
    }

    pub fn lines(&self) -> &[ConfigLine] {
        &self.config_lines
    }

    pub fn index_records(&self) -> &[IndexRecord] {
        &self.index_records
    }

    /// First integer MHz covered by the index.
    pub fn first_mhz(&self) -> u32 {
        self.first_mhz
    }

    /// Two-level resolution: index record by integer MHz, then the config line.
    pub fn lookup_line(&self, f: Frequency) -> Result<usize, MmcmError> {
        let not_found = || MmcmError::NotFound(f.mhz());
        let slot = f
            .whole_mhz()
            .checked_sub(self.first_mhz)
            .ok_or_else(not_found)? as usize;
        let rec = self.index_records.get(slot).ok_or_else(not_found)?;
        let frac = f.frac_eighths() as u8;
        if rec.count == 0 || frac < rec.first_frac {
            return Err(not_found());
        }
        let delta = frac - rec.first_frac;
        if !delta.is_multiple_of(rec.shift) || delta / rec.shift >= rec.count {
            return Err(not_found());
        }
        Ok(rec.base as usize + (delta / rec.shift) as usize)
    }

    pub fn lookup(&self, f: Frequency) -> Result<MmcmConfig, MmcmError> {
        self.lookup_line(f).map(|line| self.config_lines[line].config)
    }

    /// CSV rows `freq_mhz,m,d,o_int,o_frac,o_frac_en,realized_mhz`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("freq_mhz,m,d,o_int,o_frac,o_frac_en,realized_mhz\n");
        let f_in = self.f_in.mhz();
        for line in &self.config_lines {
            let c = &line.config;
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                line.target.mhz(),
                c.m(),
                c.d(),
                c.o_int(),
                c.o_frac(),
                u8::from(c.o_frac_en()),
                mmcm_output_frequency(c, f_in)
            )
            .unwrap();
        }
        out
    }

    /// Memory image, one 64-bit word per line in hex, index words first.
    pub fn to_mem_init(&self) -> String {
        let mut out = String::new();
        writeln!(out, "// configuration memory, f_in = {} MHz", self.f_in.mhz()).unwrap();
        writeln!(
            out,
            "// words 0..{}: index for integer MHz {}..{} (address = MHz - {})",
            self.index_records.len(),
            self.first_mhz,
            self.first_mhz as usize + self.index_records.len() - 1,
            self.first_mhz
        )
        .unwrap();
        writeln!(
            out,
            "//   [9:0] base line, [12:10] first frac (1/8 MHz), [16:13] shift (1/8 MHz per line), [20:17] count"
        )
        .unwrap();
        writeln!(
            out,
            "// words {}..{}: config lines (line n at word {} + n)",
            self.index_records.len(),
            self.index_records.len() + self.config_lines.len(),
            self.index_records.len()
        )
        .unwrap();
        writeln!(
            out,
            "//   [9:0] M*8, [16:10] D, [24:17] O_int, [27:25] O_frac, [28] O_frac_en, [44:32] target*8"
        )
        .unwrap();
        for rec in &self.index_records {
            writeln!(out, "{:016x}", pack_index(rec)).unwrap();
        }
        for line in &self.config_lines {
            writeln!(out, "{:016x}", pack_line(line)).unwrap();
        }
        out
    }
}

pub fn pack_index(rec: &IndexRecord) -> u64 {
    (rec.base as u64 & 0x3ff)
        | ((rec.first_frac as u64 & 0x7) << 10)
        | ((rec.shift as u64 & 0xf) << 13)
        | ((rec.count as u64 & 0xf) << 17)
}

pub fn pack_line(line: &ConfigLine) -> u64 {
    let c = &line.config;
    (c.m_eighths() as u64 & 0x3ff)
        | ((c.d() as u64 & 0x7f) << 10)
        | ((c.o_int() as u64 & 0xff) << 17)
        | ((c.o_frac() as u64 & 0x7) << 25)
        | ((c.o_frac_en() as u64) << 28)
        | ((line.target.eighths() as u64 & 0x1fff) << 32)
}
