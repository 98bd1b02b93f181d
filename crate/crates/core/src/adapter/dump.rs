//! Binary container for final-layer attention.
//!
//! Layout (little-endian): the 8-byte magic `MMVUATN1`, eight `u32` header
//! fields (version, heads, n_sys, n_vis, n_q, n_a, grid_rows, grid_cols), then
//! `heads * N * N` `f32` values in `[head][row][column]` order, where
//! `N = n_sys + n_vis + n_q + n_a`. Row `i` is the attending token.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::ops::Range;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::DumpError;

pub const MAGIC: &[u8; 8] = b"MMVUATN1";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 40;

/// Token-count partition of a sequence plus the head count and visual grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SegmentLengths {
    pub n_sys: u32,
    pub n_vis: u32,
    pub n_q: u32,
    pub n_a: u32,
    pub heads: u32,
    pub grid_rows: u32,
    pub grid_cols: u32,
}

impl SegmentLengths {
    pub fn total(&self) -> usize {
        (self.n_sys + self.n_vis + self.n_q + self.n_a) as usize
    }

    pub fn system(&self) -> Range<usize> {
        0..self.n_sys as usize
    }

    pub fn visual(&self) -> Range<usize> {
        let start = self.n_sys as usize;
        start..start + self.n_vis as usize
    }

    pub fn question(&self) -> Range<usize> {
        let start = (self.n_sys + self.n_vis) as usize;
        start..start + self.n_q as usize
    }

    pub fn answer(&self) -> Range<usize> {
        let start = (self.n_sys + self.n_vis + self.n_q) as usize;
        start..start + self.n_a as usize
    }

    /// Number of `f32` values in the payload, if it fits in memory arithmetic.
    pub fn payload_len(&self) -> Option<usize> {
        let n = (self.n_sys as u64)
            .checked_add(self.n_vis as u64)?
            .checked_add(self.n_q as u64)?
            .checked_add(self.n_a as u64)?;
        let len = (self.heads as u64).checked_mul(n)?.checked_mul(n)?;
        usize::try_from(len).ok()
    }

    pub fn validate(&self) -> Result<(), DumpError> {
        let named = [
            ("n_sys", self.n_sys),
            ("n_vis", self.n_vis),
            ("n_q", self.n_q),
            ("n_a", self.n_a),
            ("heads", self.heads),
            ("grid_rows", self.grid_rows),
            ("grid_cols", self.grid_cols),
        ];
        if let Some((name, _)) = named.iter().find(|(_, v)| *v == 0) {
            return Err(DumpError::InvalidSegments(format!(
                "{name} must be positive"
            )));
        }
        if (self.grid_rows as u64) * (self.grid_cols as u64) != self.n_vis as u64 {
            return Err(DumpError::InvalidSegments(format!(
                "grid {}x{} does not cover n_vis = {}",
                self.grid_rows, self.grid_cols, self.n_vis
            )));
        }
        if self.payload_len().is_none()
            || u32::try_from(
                self.n_sys as u64 + self.n_vis as u64 + self.n_q as u64 + self.n_a as u64,
            )
            .is_err()
        {
            return Err(DumpError::InvalidSegments(
                "sequence length overflows".into(),
            ));
        }
        Ok(())
    }
}

/// Final-layer attention of one model call, all heads.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionDump {
    segments: SegmentLengths,
    values: Vec<f32>,
}

impl AttentionDump {
    pub fn new(segments: SegmentLengths, values: Vec<f32>) -> Result<Self, DumpError> {
        segments.validate()?;
        let expected = segments.payload_len().expect("validated");
        if values.len() != expected {
            return Err(DumpError::SizeMismatch {
                expected: expected as u64 * 4,
                actual: values.len() as u64 * 4,
            });
        }
        check_values(&values)?;
        Ok(AttentionDump { segments, values })
    }

    pub fn segments(&self) -> &SegmentLengths {
        &self.segments
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn seq_len(&self) -> usize {
        self.segments.total()
    }

    pub fn heads(&self) -> usize {
        self.segments.heads as usize
    }

    /// The `N x N` matrix of one head, row-major.
    pub fn head(&self, h: usize) -> &[f32] {
        let n2 = self.seq_len() * self.seq_len();
        &self.values[h * n2..(h + 1) * n2]
    }

    pub fn get(&self, head: usize, row: usize, col: usize) -> f32 {
        let n = self.seq_len();
        self.values[(head * n + row) * n + col]
    }

    pub fn encoded_len(&self) -> usize {
        HEADER_LEN + self.values.len() * 4
    }

    pub fn write_to<W: Write>(&self, mut writer: W) -> Result<(), DumpError> {
        self.segments.validate()?;
        let s = &self.segments;
        writer.write_all(MAGIC)?;
        for field in [
            VERSION,
            s.heads,
            s.n_sys,
            s.n_vis,
            s.n_q,
            s.n_a,
            s.grid_rows,
            s.grid_cols,
        ] {
            writer.write_all(&field.to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.values.len() * 4);
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        writer.write_all(&buf)?;
        writer.flush()?;
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.write_to(&mut out)
            .expect("in-memory write of a valid dump");
        out
    }

    /// Reads and validates a dump. Magic, version and shape arithmetic are
    /// checked before the payload is decoded.
    pub fn read_from<R: Read>(mut reader: R) -> Result<Self, DumpError> {
        let mut header = [0u8; HEADER_LEN];
        let mut filled = 0;
        while filled < HEADER_LEN {
            let n = reader.read(&mut header[filled..])?;
            if n == 0 {
                break;
            }
            filled += n;
        }
        if filled < MAGIC.len() || &header[..8] != MAGIC {
            return Err(DumpError::BadMagic);
        }
        if filled < HEADER_LEN {
            return Err(DumpError::SizeMismatch {
                expected: HEADER_LEN as u64,
                actual: filled as u64,
            });
        }
        let field =
            |i: usize| u32::from_le_bytes(header[8 + 4 * i..12 + 4 * i].try_into().unwrap());
        let version = field(0);
        if version != VERSION {
            return Err(DumpError::UnsupportedVersion(version));
        }
        let segments = SegmentLengths {
            heads: field(1),
            n_sys: field(2),
            n_vis: field(3),
            n_q: field(4),
            n_a: field(5),
            grid_rows: field(6),
            grid_cols: field(7),
        };
        segments.validate()?;
        let expected = segments.payload_len().expect("validated") as u64 * 4;

        // Bounded by the bytes actually present, never by the header's claim.
        let mut payload = Vec::new();
        reader.take(expected + 1).read_to_end(&mut payload)?;
        if payload.len() as u64 != expected {
            return Err(DumpError::SizeMismatch {
                expected,
                actual: payload.len() as u64,
            });
        }
        let values: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        check_values(&values)?;
        Ok(AttentionDump { segments, values })
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, DumpError> {
        Self::read_from(bytes)
    }

    pub fn read_file(path: impl AsRef<Path>) -> Result<Self, DumpError> {
        Self::read_from(BufReader::new(File::open(path)?))
    }

    pub fn write_file(&self, path: impl AsRef<Path>) -> Result<(), DumpError> {
        self.write_to(BufWriter::new(File::create(path)?))
    }
}

fn check_values(values: &[f32]) -> Result<(), DumpError> {
    for (i, v) in values.iter().enumerate() {
        if !v.is_finite() {
            return Err(DumpError::NonFinite(i));
        }
        if *v < 0.0 {
            return Err(DumpError::Negative(i));
        }
    }
    Ok(())
}
