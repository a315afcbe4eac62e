//! DSB1 binary trace container.
//!
//! Little-endian layout:
//!
//! | offset | size | field                                   |
//! |--------|------|-----------------------------------------|
//! | 0      | 4    | magic `DSB1`                            |
//! | 4      | 4    | format version (u32, = 1)               |
//! | 8      | 8    | n_traces (u64)                          |
//! | 16     | 8    | n_samples (u64)                         |
//! | 24     | 8    | sample_rate_hz (f64)                    |
//! | 32     | 4    | resolution_bits (u32)                   |
//! | 36     | 1    | chip label length (0..=27)              |
//! | 37     | 27   | chip label, UTF-8, zero padded          |
//!
//! followed by the key (16 bytes), the plaintexts (`n_traces x 16`) and the
//! samples (`n_traces x n_samples` binary32), all row-major.

use std::io::{self, Read, Write};

use ndarray::Array2;

use crate::trace::TraceSet;

pub const MAGIC: [u8; 4] = *b"DSB1";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 64;
/// Room left in the reserved header area for the chip label.
pub const MAX_LABEL_LEN: usize = HEADER_LEN - 37;

#[derive(Debug, thiserror::Error)]
pub enum FormatError {
    #[error("bad magic {found:?}, expected \"DSB1\"")]
    BadMagic { found: [u8; 4] },
    #[error("unsupported DSB1 version {found} (this reader handles {VERSION})")]
    UnsupportedVersion { found: u32 },
    #[error("truncated {section}: expected {expected} bytes, got {actual}")]
    Truncated {
        section: &'static str,
        expected: u64,
        actual: u64,
    },
    #[error("chip label is {0} bytes, at most {MAX_LABEL_LEN} fit in the header")]
    LabelTooLong(usize),
    #[error("invalid header: {0}")]
    InvalidHeader(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Total encoded size of a set with the given shape.
pub fn encoded_len(n_traces: usize, n_samples: usize) -> u64 {
    HEADER_LEN as u64 + 16 + 16 * n_traces as u64 + 4 * (n_traces as u64) * (n_samples as u64)
}

/// Writes `set` as DSB1 and returns the number of bytes emitted.
pub fn write_trace_set<W: Write>(set: &TraceSet, mut sink: W) -> Result<u64, FormatError> {
    let label = set.chip_label.as_bytes();
    if label.len() > MAX_LABEL_LEN {
        return Err(FormatError::LabelTooLong(label.len()));
    }
    let mut header = [0u8; HEADER_LEN];
    header[0..4].copy_from_slice(&MAGIC);
    header[4..8].copy_from_slice(&VERSION.to_le_bytes());
    header[8..16].copy_from_slice(&(set.n_traces() as u64).to_le_bytes());
    header[16..24].copy_from_slice(&(set.n_samples() as u64).to_le_bytes());
    header[24..32].copy_from_slice(&set.sample_rate_hz.to_le_bytes());
    header[32..36].copy_from_slice(&set.resolution_bits.to_le_bytes());
    header[36] = label.len() as u8;
    header[37..37 + label.len()].copy_from_slice(label);
    sink.write_all(&header)?;
    sink.write_all(&set.key)?;
    for pt in &set.plaintexts {
        sink.write_all(pt)?;
    }
    let mut row_buf = Vec::with_capacity(4 * set.n_samples());
    for row in set.samples.rows() {
        row_buf.clear();
        for &v in row {
            row_buf.extend_from_slice(&v.to_le_bytes());
        }
        sink.write_all(&row_buf)?;
    }
    sink.flush()?;
    Ok(encoded_len(set.n_traces(), set.n_samples()))
}

/// Reads exactly `buf.len()` bytes, reporting how many arrived on a short read.
fn read_section<R: Read>(
    source: &mut R,
    buf: &mut [u8],
    section: &'static str,
) -> Result<(), FormatError> {
    let mut filled = 0;
    while filled < buf.len() {
        match source.read(&mut buf[filled..]) {
            Ok(0) => {
                return Err(FormatError::Truncated {
                    section,
                    expected: buf.len() as u64,
                    actual: filled as u64,
                })
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn u64_at(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().unwrap())
}

pub fn read_trace_set<R: Read>(mut source: R) -> Result<TraceSet, FormatError> {
    let mut header = [0u8; HEADER_LEN];
    // Check the magic on its own so a short garbage file reports the magic, not truncation.
    read_section(&mut source, &mut header[..4], "magic")?;
    let magic: [u8; 4] = header[..4].try_into().unwrap();
    if magic != MAGIC {
        return Err(FormatError::BadMagic { found: magic });
    }
    read_section(&mut source, &mut header[4..], "header")?;
    let version = u32_at(&header, 4);
    if version != VERSION {
        return Err(FormatError::UnsupportedVersion { found: version });
    }
    let n_traces = usize::try_from(u64_at(&header, 8))
        .map_err(|_| FormatError::InvalidHeader("n_traces overflows usize".into()))?;
    let n_samples = usize::try_from(u64_at(&header, 16))
        .map_err(|_| FormatError::InvalidHeader("n_samples overflows usize".into()))?;
    let sample_rate_hz = f64::from_le_bytes(header[24..32].try_into().unwrap());
    let resolution_bits = u32_at(&header, 32);
    let label_len = header[36] as usize;
    if label_len > MAX_LABEL_LEN {
        return Err(FormatError::InvalidHeader(format!(
            "chip label length {label_len}"
        )));
    }
    let chip_label = std::str::from_utf8(&header[37..37 + label_len])
        .map_err(|_| FormatError::InvalidHeader("chip label is not UTF-8".into()))?
        .to_owned();

    let mut key = [0u8; 16];
    read_section(&mut source, &mut key, "key")?;

    let mut pt_bytes = vec![0u8; 16 * n_traces];
    read_section(&mut source, &mut pt_bytes, "plaintexts")?;
    let plaintexts = pt_bytes
        .chunks_exact(16)
        .map(|c| c.try_into().unwrap())
        .collect();

    let total = n_traces
        .checked_mul(n_samples)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| FormatError::InvalidHeader("sample section size overflows".into()))?;
    let mut raw = vec![0u8; total];
    read_section(&mut source, &mut raw, "samples")?;
    let values: Vec<f32> = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    let samples = Array2::from_shape_vec((n_traces, n_samples), values)
        .expect("shape matches the section size");

    Ok(TraceSet {
        sample_rate_hz,
        resolution_bits,
        key,
        plaintexts,
        samples,
        chip_label,
    })
}

pub fn write_to_path(set: &TraceSet, path: &std::path::Path) -> Result<u64, FormatError> {
    let file = std::fs::File::create(path)?;
    write_trace_set(set, io::BufWriter::new(file))
}

pub fn read_from_path(path: &std::path::Path) -> Result<TraceSet, FormatError> {
    let file = std::fs::File::open(path)?;
    read_trace_set(io::BufReader::new(file))
}
